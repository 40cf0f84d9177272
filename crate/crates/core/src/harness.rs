//! Toy distillation harness.
//!
//! A linear student `W` (teacher_dim x c_desc) followed by row normalization
//! is trained by plain gradient descent to reproduce the cosine structure of
//! synthetic teacher mini-sets. Each step draws a fresh mini-set of `c_desc`
//! teacher descriptors, perturbs it into `n_views` views, compresses the
//! teacher to `c_desc` dimensions (LRA or PCA), solves one Procrustes map per
//! view, and descends on `w_op * L_op + w_sim * L_sim` with the maps frozen.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::descriptor::{gram_gap, l2_normalize_rows, DescriptorSet, ZERO_NORM};
use crate::distill::{
    lra_compress, op_loss, op_loss_grad, pca_compress, sim_loss, sim_loss_grad, total_loss, LossWeights,
};
use crate::error::{Error, Result};

/// Dimension of the cached teacher descriptors.
pub const TEACHER_DIM: usize = 128;
/// Training stops with [`Error::DivergenceDetected`] once the total loss
/// exceeds its initial value by this factor.
pub const DIVERGENCE_FACTOR: f64 = 1e3;
pub const CSV_HEADER: &str = "step,l_op,l_sim,total,gram_gap,mean_view_cosine";

pub type Rng64 = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// How the teacher mini-set is compressed to the student dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Compression {
    #[default]
    Lra,
    Pca,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Student descriptor dimension; also the mini-set size.
    pub c_desc: usize,
    pub teacher_dim: usize,
    /// Intrinsic dimension of the synthetic teacher distribution. `None`
    /// means `c_desc`; `Some(teacher_dim)` gives isotropic teachers.
    pub teacher_rank: Option<usize>,
    pub n_views: usize,
    pub noise_sigma: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub compression: Compression,
    pub use_sim_loss: bool,
    /// Draw a new mini-set (and new views) every step. When false the first
    /// mini-set is reused, which makes the objective fixed.
    pub fresh_batches: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            c_desc: 32,
            teacher_dim: TEACHER_DIM,
            teacher_rank: None,
            n_views: 4,
            noise_sigma: 0.05,
            steps: 2000,
            learning_rate: 0.05,
            weights: LossWeights::default(),
            compression: Compression::Lra,
            use_sim_loss: true,
            fresh_batches: true,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn teacher_rank(&self) -> usize {
        self.teacher_rank.unwrap_or(self.c_desc)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.c_desc < 2 || self.c_desc > self.teacher_dim {
            return fail(format!("c_desc {} outside 2..={}", self.c_desc, self.teacher_dim));
        }
        let rank = self.teacher_rank();
        if rank < 2 || rank > self.teacher_dim {
            return fail(format!("teacher_rank {rank} outside 2..={}", self.teacher_dim));
        }
        if self.n_views < 1 {
            return fail("n_views must be >= 1".into());
        }
        if self.steps < 1 {
            return fail("steps must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        LossWeights::new(self.weights.w_op, self.weights.w_sim, self.weights.w_detect)?;
        Ok(())
    }
}

/// `c_desc` i.i.d. directions uniform on the unit sphere in `dim`
/// dimensions.
pub fn gen_teacher_batch(c_desc: usize, dim: usize, seed: u64) -> Result<DescriptorSet> {
    if c_desc < 2 || dim < c_desc {
        return Err(Error::BadDimension(format!(
            "need 2 <= c_desc <= dim, got c_desc={c_desc} dim={dim}"
        )));
    }
    TeacherModel::isotropic(dim).sample(c_desc, &mut rng_from_seed(seed))
}

/// Synthetic teacher distribution: unit vectors uniform on the sphere of a
/// fixed `rank`-dimensional subspace of the teacher space.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    dim: usize,
    /// `rank x dim` with orthonormal rows; `None` for the full space.
    basis: Option<DMatrix<f64>>,
}

impl TeacherModel {
    pub fn isotropic(dim: usize) -> Self {
        Self { dim, basis: None }
    }

    pub fn subspace(rank: usize, dim: usize, rng: &mut impl Rng) -> Self {
        if rank >= dim {
            return Self::isotropic(dim);
        }
        let q = gaussian_matrix(dim, rank, rng).qr().q();
        Self {
            dim,
            basis: Some(q.transpose()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, rows: usize, rng: &mut impl Rng) -> Result<DescriptorSet> {
        match &self.basis {
            None => DescriptorSet::new(gaussian_matrix(rows, self.dim, rng)),
            Some(b) => DescriptorSet::new(gaussian_matrix(rows, b.nrows(), rng) * b),
        }
    }
}

/// Outcome of choosing a teacher mini-set from a cache.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Selected(DescriptorSet),
    Discard,
}

/// Keeps the first `c_desc` rows of a score-ordered cache, or signals that
/// the image set must be discarded when fewer than `c_desc` descriptors are
/// co-visible.
pub fn select_top_covisible(cached: &DescriptorSet, covisible_count: usize, c_desc: usize) -> Selection {
    if covisible_count < c_desc || cached.rows() < c_desc {
        return Selection::Discard;
    }
    let top = cached.matrix().rows(0, c_desc).into_owned();
    Selection::Selected(DescriptorSet::from_unit_rows(top).expect("rows of a valid set"))
}

/// View 0 is the input itself; views 1.. add isotropic Gaussian noise and
/// re-normalize. Each coordinate gets standard deviation `sigma / sqrt(dim)`,
/// so `sigma` is the typical length of the noise vector whatever the
/// dimension.
pub fn gen_views(inputs: &DescriptorSet, n: usize, sigma: f64, seed: u64) -> Result<Vec<DescriptorSet>> {
    gen_views_with(inputs, n, sigma, &mut rng_from_seed(seed))
}

pub fn gen_views_with(
    inputs: &DescriptorSet,
    n: usize,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Vec<DescriptorSet>> {
    if n < 1 {
        return Err(Error::InvalidConfig("need at least one view".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("bad noise sigma {sigma}")));
    }
    let mut views = Vec::with_capacity(n);
    views.push(inputs.clone());
    for _ in 1..n {
        if sigma == 0.0 {
            views.push(inputs.clone());
            continue;
        }
        let noise = gaussian_matrix(inputs.rows(), inputs.dim(), rng) * (sigma / (inputs.dim() as f64).sqrt());
        views.push(DescriptorSet::new(inputs.matrix() + noise)?);
    }
    Ok(views)
}

/// Linear description head: `normalize(x * W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyStudent {
    pub weights: DMatrix<f64>,
}

impl ToyStudent {
    pub fn new(weights: DMatrix<f64>) -> Self {
        Self { weights }
    }

    /// Gaussian init with variance `1 / d_in`.
    pub fn random(d_in: usize, c_desc: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (d_in as f64).sqrt();
        Self::new(gaussian_matrix(d_in, c_desc, rng) * scale)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }
}

fn check_student_input(student: &ToyStudent, inputs: &DMatrix<f64>) -> Result<()> {
    if inputs.ncols() != student.input_dim() {
        return Err(Error::ShapeMismatch {
            left: inputs.shape(),
            right: student.weights.shape(),
        });
    }
    Ok(())
}

pub fn student_forward(student: &ToyStudent, inputs: &DMatrix<f64>) -> Result<DescriptorSet> {
    check_student_input(student, inputs)?;
    l2_normalize_rows(&(inputs * &student.weights))
}

/// Gradient with respect to `W` given the upstream gradient on the
/// normalized outputs: each row goes through `(I - y y^T) / ||v||` and then
/// the linear map.
pub fn student_backward(
    student: &ToyStudent,
    inputs: &DMatrix<f64>,
    upstream: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_student_input(student, inputs)?;
    let projected = inputs * &student.weights;
    if upstream.shape() != projected.shape() {
        return Err(Error::ShapeMismatch {
            left: upstream.shape(),
            right: projected.shape(),
        });
    }
    let mut dv = DMatrix::zeros(projected.nrows(), projected.ncols());
    for r in 0..projected.nrows() {
        let v = projected.row(r);
        let norm = v.norm();
        if norm <= ZERO_NORM {
            return Err(Error::ZeroRow { index: r });
        }
        let y = v / norm;
        let g = upstream.row(r);
        let radial = g.dot(&y);
        dv.row_mut(r).copy_from(&((g - y * radial) / norm));
    }
    Ok(inputs.transpose() * dv)
}

/// Metrics recorded once per step, before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l_op: f64,
    pub l_sim: f64,
    pub total: f64,
    /// Gram gap between the student's view-0 output and the teacher mini-set.
    pub gram_gap: f64,
    /// Mean cosine between corresponding rows of view 0 and every other
    /// view; 1 with a single view.
    pub mean_view_cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub student: ToyStudent,
}

impl TrainReport {
    pub fn first(&self) -> &StepRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("at least one step")
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.step, r.l_op, r.l_sim, r.total, r.gram_gap, r.mean_view_cosine
            )?;
        }
        Ok(())
    }
}

pub fn mean_view_cosine(outputs: &[DescriptorSet]) -> f64 {
    if outputs.len() < 2 {
        return 1.0;
    }
    let base = &outputs[0];
    let mut total = 0.0;
    for other in &outputs[1..] {
        for r in 0..base.rows() {
            total += base.cosine(r, other, r);
        }
    }
    total / ((outputs.len() - 1) * base.rows()) as f64
}

/// Everything computed for one mini-set at fixed student weights.
pub struct StepState {
    pub teacher: DescriptorSet,
    pub views: Vec<DescriptorSet>,
    pub target: DMatrix<f64>,
    pub outputs: Vec<DescriptorSet>,
    pub maps: Vec<crate::distill::OrthogonalMap>,
    pub record: StepRecord,
}

fn compress(teacher: &DescriptorSet, config: &DistillConfig) -> Result<DMatrix<f64>> {
    match config.compression {
        Compression::Lra => Ok(lra_compress(teacher, config.c_desc)?.target),
        Compression::Pca => pca_compress(teacher, config.c_desc),
    }
}

/// Forward pass and losses for one mini-set.
pub fn evaluate_step(
    student: &ToyStudent,
    teacher: DescriptorSet,
    views: Vec<DescriptorSet>,
    config: &DistillConfig,
    step: usize,
) -> Result<StepState> {
    let target = compress(&teacher, config)?;
    let outputs = views
        .iter()
        .map(|v| student_forward(student, v.matrix()))
        .collect::<Result<Vec<_>>>()?;
    let (l_op, maps) = op_loss(&target, &outputs)?;
    let l_sim = if config.use_sim_loss && outputs.len() >= 2 {
        sim_loss(&outputs)?
    } else {
        0.0
    };
    let record = StepRecord {
        step,
        l_op,
        l_sim,
        total: total_loss(l_op, l_sim, 0.0, &config.weights),
        gram_gap: gram_gap(outputs[0].matrix(), teacher.matrix())?,
        mean_view_cosine: mean_view_cosine(&outputs),
    };
    Ok(StepState {
        teacher,
        views,
        target,
        outputs,
        maps,
        record,
    })
}

/// Gradient of the weighted objective with respect to the student weights,
/// with the Procrustes maps in `state` held fixed.
pub fn weight_gradient(student: &ToyStudent, state: &StepState, config: &DistillConfig) -> Result<DMatrix<f64>> {
    let n = state.outputs.len();
    let w = &config.weights;
    let sim_grads = if config.use_sim_loss && n >= 2 {
        Some(sim_loss_grad(&state.outputs)?)
    } else {
        None
    };
    let mut grad = DMatrix::zeros(student.input_dim(), student.output_dim());
    for i in 0..n {
        let mut upstream = op_loss_grad(&state.target, state.outputs[i].matrix(), &state.maps[i], n)? * w.w_op;
        if let Some(g) = &sim_grads {
            upstream += &g[i] * w.w_sim;
        }
        grad += student_backward(student, state.views[i].matrix(), &upstream)?;
    }
    Ok(grad)
}

/// Runs the gradient-descent loop described in the module docs.
pub fn train(config: &DistillConfig) -> Result<TrainReport> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let teachers = TeacherModel::subspace(config.teacher_rank(), config.teacher_dim, &mut rng);
    let mut student = ToyStudent::random(config.teacher_dim, config.c_desc, &mut rng);

    let mut records = Vec::with_capacity(config.steps);
    let mut fixed: Option<(DescriptorSet, Vec<DescriptorSet>)> = None;
    let mut initial_total = f64::NAN;

    for step in 0..config.steps {
        let (teacher, views) = match (&fixed, config.fresh_batches) {
            (Some(batch), false) => batch.clone(),
            _ => {
                let teacher = teachers.sample(config.c_desc, &mut rng)?;
                let views = gen_views_with(&teacher, config.n_views, config.noise_sigma, &mut rng)?;
                if !config.fresh_batches {
                    fixed = Some((teacher.clone(), views.clone()));
                }
                (teacher, views)
            }
        };

        let state = evaluate_step(&student, teacher, views, config, step)?;
        let total = state.record.total;
        if step == 0 {
            initial_total = total;
        }
        if !total.is_finite() || total > DIVERGENCE_FACTOR * initial_total {
            return Err(Error::DivergenceDetected {
                step,
                total,
                initial: initial_total,
            });
        }
        records.push(state.record);

        let grad = weight_gradient(&student, &state, config)?;
        student.weights -= grad * config.learning_rate;
    }

    Ok(TrainReport { records, student })
}

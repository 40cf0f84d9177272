#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ep2_core::harness::rng_from_seed;
use ep2_core::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    /// Value printed as `key=<value>` on stdout.
    pub fn value(&self, key: &str) -> f64 {
        let prefix = format!("{key}=");
        self.stdout
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix(&prefix))
            .unwrap_or_else(|| panic!("no {key}= in {:?}", self.stdout))
            .parse()
            .unwrap()
    }
}

pub fn ep2(args: &[&str]) -> Run {
    ep2_env(args, &[])
}

pub fn ep2_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ep2"));
    cmd.args(args).env_remove("EP2_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let Output { status, stdout, stderr } = cmd.output().expect("spawn ep2");
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn unit_rows(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut m = gaussian(rows, cols, seed);
    for mut r in m.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    m
}

pub fn orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    gaussian(n, n, seed).qr().q()
}

pub fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Cayley transform of a random skew matrix of size `eps`: an orthogonal
/// matrix close to the identity.
pub fn near_identity_rotation(n: usize, eps: f64, seed: u64) -> DMatrix<f64> {
    let g = gaussian(n, n, seed);
    let k = (&g - g.transpose()) * (eps / 2.0);
    let id = DMatrix::identity(n, n);
    (&id - &k).try_inverse().unwrap() * (id + k)
}

//! Disjoint LinUCB on plain nested vectors with an explicit Gauss-Jordan
//! inverse of each arm's design matrix.

pub struct Arm {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

pub struct LinUcb {
    pub arms: Vec<Arm>,
    pub alpha: f64,
}

pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut aug: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col];
                let pivot_row = aug[col].clone();
                for (v, pv) in aug[row].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinUcb {
    pub fn new(arms: usize, dim: usize, alpha: f64) -> Self {
        let eye = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect::<Vec<Vec<f64>>>();
        Self {
            arms: (0..arms)
                .map(|_| Arm {
                    a: eye.clone(),
                    b: vec![0.0; dim],
                })
                .collect(),
            alpha,
        }
    }

    /// `θᵀx + α·sqrt(xᵀA⁻¹x)` with `θ = A⁻¹b`, one query vector per arm.
    pub fn scores(&self, queries: &[Vec<f64>]) -> Vec<f64> {
        self.arms
            .iter()
            .zip(queries)
            .map(|(arm, x)| {
                let inv = invert(&arm.a);
                let theta = mat_vec(&inv, &arm.b);
                dot(&theta, x) + self.alpha * dot(x, &mat_vec(&inv, x)).sqrt()
            })
            .collect()
    }

    pub fn update(&mut self, arm: usize, x: &[f64], reward: f64) {
        let a = &mut self.arms[arm];
        for i in 0..x.len() {
            for j in 0..x.len() {
                a.a[i][j] += x[i] * x[j];
            }
            a.b[i] += reward * x[i];
        }
    }
}

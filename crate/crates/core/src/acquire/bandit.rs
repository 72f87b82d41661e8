//! LinUCB over visual context plus post-hoc haptic context.
//!
//! At selection time the haptic slots of the query are unknown. They are
//! filled per arm according to [`HapticQuery`]; updates always use the
//! haptic features actually observed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::context::{HapticContext, VisualContext, HAPTIC_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("arm {arm} out of range (bandit has {arms})")]
    UnknownArm { arm: usize, arms: usize },
    #[error("context dimension {got} != {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("design matrix of arm {0} is not positive definite")]
    SingularDesign(usize),
}

/// How haptic slots are filled when scoring arms before an attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HapticQuery {
    /// Zeros.
    ZeroPad,
    /// Mean observed haptic context of this arm on this food class; zeros
    /// before the first observation.
    #[default]
    ArmMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub pulls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HapticMean {
    pub arm: usize,
    pub food_class: String,
    pub count: u64,
    pub sum: [f64; HAPTIC_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub arms: Vec<ArmModel>,
    pub alpha: f64,
    pub attempts: u64,
    pub query: HapticQuery,
    pub haptic_means: Vec<HapticMean>,
}

impl BanditState {
    /// `dim` is the full (visual + haptic) context dimension.
    pub fn new(num_arms: usize, dim: usize, alpha: f64) -> Self {
        Self {
            arms: (0..num_arms)
                .map(|_| ArmModel {
                    a: DMatrix::identity(dim, dim),
                    b: DVector::zeros(dim),
                    pulls: 0,
                })
                .collect(),
            alpha,
            attempts: 0,
            query: HapticQuery::default(),
            haptic_means: Vec::new(),
        }
    }

    pub fn with_query(mut self, query: HapticQuery) -> Self {
        self.query = query;
        self
    }

    pub fn dim(&self) -> usize {
        self.arms.first().map_or(0, |a| a.b.len())
    }

    fn haptic_query(&self, arm: usize, food_class: &str) -> [f64; HAPTIC_DIM] {
        match self.query {
            HapticQuery::ZeroPad => [0.0; HAPTIC_DIM],
            HapticQuery::ArmMean => self
                .haptic_means
                .iter()
                .find(|m| m.arm == arm && m.food_class == food_class)
                .map_or([0.0; HAPTIC_DIM], |m| m.sum.map(|s| s / m.count as f64)),
        }
    }

    fn query_vector(&self, arm: usize, ctx: &VisualContext) -> Result<DVector<f64>, BanditError> {
        let expected = self.dim();
        let got = ctx.features.len() + HAPTIC_DIM;
        if got != expected {
            return Err(BanditError::DimensionMismatch { got, expected });
        }
        let h = self.haptic_query(arm, &ctx.food_class);
        Ok(DVector::from_iterator(
            expected,
            ctx.features.iter().copied().chain(h),
        ))
    }

    /// UCB score of every arm for this context.
    pub fn scores(&self, ctx: &VisualContext) -> Result<Vec<f64>, BanditError> {
        self.arms
            .iter()
            .enumerate()
            .map(|(i, arm)| {
                let x = self.query_vector(i, ctx)?;
                let chol = arm
                    .a
                    .clone()
                    .cholesky()
                    .ok_or(BanditError::SingularDesign(i))?;
                let theta = chol.solve(&arm.b);
                let ainv_x = chol.solve(&x);
                Ok(theta.dot(&x) + self.alpha * x.dot(&ainv_x).max(0.0).sqrt())
            })
            .collect()
    }

    pub fn update(
        &mut self,
        arm: usize,
        visual: &VisualContext,
        haptic: &HapticContext,
        reward: bool,
    ) -> Result<(), BanditError> {
        let arms = self.arms.len();
        if arm >= arms {
            return Err(BanditError::UnknownArm { arm, arms });
        }
        let dim = self.dim();
        let got = visual.features.len() + HAPTIC_DIM;
        if got != dim {
            return Err(BanditError::DimensionMismatch { got, expected: dim });
        }
        let x = DVector::from_iterator(dim, visual.features.iter().copied().chain(haptic.z));
        let model = &mut self.arms[arm];
        model.a += &x * x.transpose();
        if reward {
            model.b += &x;
        }
        model.pulls += 1;
        self.attempts += 1;
        match self
            .haptic_means
            .iter_mut()
            .find(|m| m.arm == arm && m.food_class == visual.food_class)
        {
            Some(m) => {
                m.count += 1;
                for (s, z) in m.sum.iter_mut().zip(haptic.z) {
                    *s += z;
                }
            }
            None => self.haptic_means.push(HapticMean {
                arm,
                food_class: visual.food_class.clone(),
                count: 1,
                sum: haptic.z,
            }),
        }
        Ok(())
    }
}

/// Highest-scoring arm; ties go to the lowest index.
pub fn select_action(bandit: &BanditState, ctx: &VisualContext) -> Result<usize, BanditError> {
    let scores = bandit.scores(ctx)?;
    Ok(argmax(&scores))
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn update_bandit(
    bandit: &BanditState,
    arm: usize,
    visual: &VisualContext,
    haptic: &HapticContext,
    reward: bool,
) -> Result<BanditState, BanditError> {
    let mut next = bandit.clone();
    next.update(arm, visual, haptic, reward)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquire::context::VISUAL_DIM;

    fn ctx() -> VisualContext {
        let mut features = vec![0.0; VISUAL_DIM];
        features[1] = 1.0;
        features[VISUAL_DIM - 1] = 1.0;
        VisualContext {
            food_class: "grape".into(),
            features,
        }
    }

    fn haptic(z: f64) -> HapticContext {
        HapticContext {
            raw: [0.0; HAPTIC_DIM],
            z: [z; HAPTIC_DIM],
        }
    }

    #[test]
    fn fresh_bandit_picks_arm_zero() {
        let b = BanditState::new(11, VISUAL_DIM + HAPTIC_DIM, 0.5);
        assert_eq!(select_action(&b, &ctx()).unwrap(), 0);
    }

    #[test]
    fn zero_reward_grows_a_only() {
        let b = BanditState::new(3, VISUAL_DIM + HAPTIC_DIM, 0.5);
        let n = update_bandit(&b, 1, &ctx(), &haptic(0.3), false).unwrap();
        assert_eq!(n.arms[1].b, b.arms[1].b);
        let x = DVector::from_iterator(16, ctx().features.into_iter().chain([0.3; 5]));
        assert!((&n.arms[1].a - &b.arms[1].a - &x * x.transpose()).amax() < 1e-15);
        assert_eq!(n.arms[0], b.arms[0]);
        assert_eq!(n.attempts, 1);
        assert!(n.arms[1].a.clone().cholesky().is_some());
        assert_eq!(n.arms[1].a, n.arms[1].a.transpose());
    }

    #[test]
    fn alpha_zero_is_pure_exploitation() {
        let mut b =
            BanditState::new(3, VISUAL_DIM + HAPTIC_DIM, 0.0).with_query(HapticQuery::ZeroPad);
        b.update(2, &ctx(), &haptic(0.0), true).unwrap();
        b.update(0, &ctx(), &haptic(0.0), false).unwrap();
        assert_eq!(select_action(&b, &ctx()).unwrap(), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut b = BanditState::new(2, VISUAL_DIM + HAPTIC_DIM, 0.5);
        b.update(1, &ctx(), &haptic(0.7), true).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: BanditState = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn rejects_bad_arm_and_dims() {
        let mut b = BanditState::new(2, VISUAL_DIM + HAPTIC_DIM, 0.5);
        assert!(matches!(
            b.update(2, &ctx(), &haptic(0.0), true),
            Err(BanditError::UnknownArm { arm: 2, arms: 2 })
        ));
        let short = VisualContext {
            food_class: "grape".into(),
            features: vec![1.0; 3],
        };
        assert!(matches!(
            select_action(&b, &short),
            Err(BanditError::DimensionMismatch { .. })
        ));
    }
}

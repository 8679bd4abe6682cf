use super::Trajectory;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel z-score statistics of a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

/// Two-pass mean and population standard deviation over every step of every
/// trajectory, channel by channel.
#[derive(Clone, Debug)]
pub(crate) struct ChannelMoments {
    sum: Vec<f64>,
    count: usize,
    mean: Vec<f64>,
    sq: Vec<f64>,
}

impl ChannelMoments {
    pub(crate) fn new(channels: usize) -> Self {
        Self { sum: vec![0.0; channels], count: 0, mean: Vec::new(), sq: vec![0.0; channels] }
    }

    pub(crate) fn first_pass(&mut self, rows: &[f32]) {
        let c = self.sum.len();
        for row in rows.chunks_exact(c) {
            for (s, v) in self.sum.iter_mut().zip(row) {
                *s += *v as f64;
            }
            self.count += 1;
        }
    }

    pub(crate) fn finish_first(&mut self) {
        self.mean = self.sum.iter().map(|s| s / self.count.max(1) as f64).collect();
    }

    pub(crate) fn second_pass(&mut self, rows: &[f32]) {
        let c = self.sum.len();
        for row in rows.chunks_exact(c) {
            for ((q, v), m) in self.sq.iter_mut().zip(row).zip(&self.mean) {
                *q += (*v as f64 - m).powi(2);
            }
        }
    }

    pub(crate) fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count.max(1) as f64;
        let std = self.sq.iter().map(|q| (q / n).sqrt().max(STD_FLOOR)).collect();
        (self.mean, std)
    }
}

pub fn compute_stats(trajs: &[Trajectory]) -> Result<NormalizationStats> {
    let first = trajs.first().ok_or_else(|| Error::StatsMissing("no trajectories to compute stats from".into()))?;
    let mut u = ChannelMoments::new(first.d_u);
    let mut y = ChannelMoments::new(first.d_y);
    for t in trajs {
        u.first_pass(&t.u);
        y.first_pass(&t.y);
    }
    u.finish_first();
    y.finish_first();
    for t in trajs {
        u.second_pass(&t.u);
        y.second_pass(&t.y);
    }
    let (u_mean, u_std) = u.finish();
    let (y_mean, y_std) = y.finish();
    Ok(NormalizationStats { u_mean, u_std, y_mean, y_std })
}

fn apply(x: &[f32], mean: &[f64], std: &[f64], forward: bool) -> Vec<f32> {
    let c = mean.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let j = i % c;
            if forward {
                ((v as f64 - mean[j]) / std[j]) as f32
            } else {
                (v as f64 * std[j] + mean[j]) as f32
            }
        })
        .collect()
}

impl NormalizationStats {
    pub fn check(&self, d_u: usize, d_y: usize) -> Result<()> {
        let ok = self.u_mean.len() == d_u && self.u_std.len() == d_u && self.y_mean.len() == d_y && self.y_std.len() == d_y;
        if !ok {
            return Err(Error::StatsMissing(format!("stats do not cover d_u = {d_u}, d_y = {d_y}")));
        }
        Ok(())
    }

    pub fn normalize_u(&self, u: &[f32]) -> Vec<f32> {
        apply(u, &self.u_mean, &self.u_std, true)
    }

    pub fn normalize_y(&self, y: &[f32]) -> Vec<f32> {
        apply(y, &self.y_mean, &self.y_std, true)
    }

    pub fn denormalize_y(&self, y: &[f32]) -> Vec<f32> {
        apply(y, &self.y_mean, &self.y_std, false)
    }

    pub fn denormalize_u(&self, u: &[f32]) -> Vec<f32> {
        apply(u, &self.u_mean, &self.u_std, false)
    }

    pub fn normalize(&self, t: &Trajectory) -> Trajectory {
        Trajectory { u: self.normalize_u(&t.u), y: self.normalize_y(&t.y), ..t.clone() }
    }

    pub fn denormalize(&self, t: &Trajectory) -> Trajectory {
        Trajectory { u: self.denormalize_u(&t.u), y: self.denormalize_y(&t.y), ..t.clone() }
    }
}

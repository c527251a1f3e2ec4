//! Evaluation protocols over a trained avatar and its dataset.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::synth::Dataset;
use crate::trainer::{Avatar, TrainConfig};

pub const LPIPS_UNSUPPORTED: &str = "unsupported";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Training timestamps seen from the held-out camera.
    NovelView,
    /// Held-out timestamps seen from the training cameras.
    SelfReenact,
    /// Held-out timestamps seen from the held-out camera.
    SelfReenactNovelView,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [
        Protocol::NovelView,
        Protocol::SelfReenact,
        Protocol::SelfReenactNovelView,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::NovelView => "novel_view",
            Protocol::SelfReenact => "self_reenact",
            Protocol::SelfReenactNovelView => "self_reenact_novel_view",
        }
    }

    /// (timestamp, view) pairs evaluated under this protocol.
    pub fn frames(self, data: &Dataset) -> Vec<(u32, usize)> {
        let split = &data.split;
        let held = split.heldout_view;
        let train_views = split.train_views(data.cameras.len());
        match self {
            Protocol::NovelView => split.train_t.iter().map(|&t| (t, held)).collect(),
            Protocol::SelfReenact => split
                .heldout_t
                .iter()
                .flat_map(|&t| train_views.iter().map(move |&v| (t, v)))
                .collect(),
            Protocol::SelfReenactNovelView => split.heldout_t.iter().map(|&t| (t, held)).collect(),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid("protocol", format!("unknown protocol {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub t: u32,
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub frame_count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Always "unsupported": no perceptual metric is computed.
    pub lpips: String,
    pub frames: Vec<FrameScore>,
    pub config: TrainConfig,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "protocol,t,view,psnr,ssim";

    /// One row per frame followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for f in &self.frames {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.protocol, f.t, f.view, f.psnr, f.ssim
            ));
        }
        out.push_str(&format!(
            "{},mean,,{},{}\n",
            self.protocol, self.mean_psnr, self.mean_ssim
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Renders every frame of `protocol` and scores it against ground truth.
pub fn evaluate(avatar: &Avatar, data: &Dataset, protocol: Protocol) -> Result<EvalReport> {
    avatar.check_data(data)?;
    let pairs = protocol.frames(data);
    if pairs.is_empty() {
        return Err(Error::invalid(
            "protocol",
            format!("{protocol} has no frames in this dataset's split"),
        ));
    }
    let frames = pairs
        .par_iter()
        .map(|&(t, view)| {
            let img = avatar.render_view(t, view)?;
            let gt = data.frame(t, view)?;
            Ok(FrameScore {
                t,
                view,
                psnr: psnr(&img, gt)?,
                ssim: ssim(&img, gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        protocol,
        frame_count: frames.len(),
        mean_psnr: mean(frames.iter().map(|f| f.psnr)),
        mean_ssim: mean(frames.iter().map(|f| f.ssim)),
        lpips: LPIPS_UNSUPPORTED.to_string(),
        frames,
        config: avatar.config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SceneSpec;
    use crate::trainer::{train, Ablation};

    fn setup() -> (Dataset, Avatar) {
        let data = Dataset::generate(&SceneSpec {
            rings: 6,
            segments: 10,
            timestamps: 5,
            width: 24,
            height: 24,
            focal: 30.0,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            iterations: 4,
            ..TrainConfig::default().with_ablation(Ablation::MultiViewM)
        };
        let (a, _) = train(&data, cfg).unwrap();
        (data, a)
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
            assert_eq!(
                serde_json::to_string(&p).unwrap(),
                format!("\"{}\"", p.name())
            );
        }
        assert!("cross_identity".parse::<Protocol>().is_err());
    }

    #[test]
    fn frame_counts_follow_the_split() {
        let (data, a) = setup();
        let n_train = data.split.train_t.len();
        let n_held = data.split.heldout_t.len();
        let views = data.split.train_views(data.cameras.len()).len();
        let counts = [n_train, n_held * views, n_held];
        for (p, n) in Protocol::ALL.into_iter().zip(counts) {
            let r = evaluate(&a, &data, p).unwrap();
            assert_eq!(r.frame_count, n);
            assert_eq!(r.frames.len(), n);
            assert_eq!(r.lpips, "unsupported");
        }
    }

    #[test]
    fn means_recompute_and_formats_agree() {
        let (data, a) = setup();
        let r = evaluate(&a, &data, Protocol::SelfReenact).unwrap();
        let n = r.frames.len() as f64;
        let mp: f64 = r.frames.iter().map(|f| f.psnr).sum::<f64>() / n;
        let ms: f64 = r.frames.iter().map(|f| f.ssim).sum::<f64>() / n;
        assert!((mp - r.mean_psnr).abs() < 1e-9);
        assert!((ms - r.mean_ssim).abs() < 1e-9);

        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let csv = r.to_csv();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), r.frames.len() + 1);
        for (row, f) in rows.iter().zip(&r.frames) {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[0], "self_reenact");
            assert_eq!(cols[1].parse::<u32>().unwrap(), f.t);
            assert_eq!(cols[2].parse::<usize>().unwrap(), f.view);
            assert_eq!(cols[3].parse::<f64>().unwrap(), f.psnr);
            assert_eq!(cols[4].parse::<f64>().unwrap(), f.ssim);
        }
        let last: Vec<&str> = rows.last().unwrap().split(',').collect();
        assert_eq!(last[3].parse::<f64>().unwrap(), r.mean_psnr);
    }

    #[test]
    fn evaluation_is_repeatable() {
        let (data, a) = setup();
        let x = evaluate(&a, &data, Protocol::NovelView).unwrap();
        let y = evaluate(&a, &data, Protocol::NovelView).unwrap();
        assert_eq!(x.to_json(), y.to_json());
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let (_, a) = setup();
        let other = Dataset::generate(&SceneSpec {
            rings: 6,
            segments: 10,
            timestamps: 10,
            width: 24,
            height: 24,
            focal: 30.0,
            ..Default::default()
        })
        .unwrap();
        assert!(evaluate(&a, &other, Protocol::NovelView).is_err());
    }
}

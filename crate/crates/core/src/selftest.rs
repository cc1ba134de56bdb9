//! Quick invariant and oracle checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::blocks::ImagePair;
use crate::codecs::{decode_flo, decode_pfm, encode_flo, encode_pfm};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::matching::{
    build_flow_volume, build_pyramid, convex_upsample, lookup_flow, FieldEstimate, FieldKind,
};
use crate::metrics::somer;
use crate::pipeline::{Model, TaskRequest};
use crate::ssd::{
    bidirectional_identity_check, causal_ssd_linear, causal_ssd_quadratic, ncssd_backward, ncssd_forward,
    ScanInputs,
};
use crate::tensor::Tensor;
use crate::weights::{init_weights, ModelWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&mut Xoshiro256PlusPlus) -> Result<(bool, String)>;

fn uniform(rng: &mut Xoshiro256PlusPlus, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi)).expect("non-empty shape")
}

fn scan(rng: &mut Xoshiro256PlusPlus, l: usize, d: usize, n: usize) -> Result<ScanInputs<f64>> {
    let x = uniform(rng, &[l, d], -1.0, 1.0);
    let a = uniform(rng, &[l], 0.5, 1.5);
    let b = uniform(rng, &[l, n], -1.0, 1.0);
    let c = uniform(rng, &[l, n], -1.0, 1.0);
    ScanInputs::new(x, a, b, c)
}

fn verdict(worst: f64, tol: f64) -> (bool, String) {
    (worst < tol, format!("max error {worst:.3e} (tolerance {tol:.0e})"))
}

fn causal_duality(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let mut worst = 0f64;
    for _ in 0..10 {
        let s = scan(rng, 48, 6, 4)?;
        let a = causal_ssd_linear(&s)?;
        let b = causal_ssd_quadratic(&s)?;
        worst = worst.max(a.y.max_abs_diff(&b.y).unwrap_or(f64::INFINITY));
    }
    Ok(verdict(worst, 1e-9))
}

fn ncssd_oracle(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let mut worst = 0f64;
    for _ in 0..10 {
        let s = scan(rng, 24, 5, 3)?;
        let y = ncssd_forward(&s, false)?.y;
        let (l, d, n) = (s.len(), s.width(), s.state_dim());
        for i in 0..l {
            for e in 0..d {
                let mut acc = 0.0;
                for j in 0..l {
                    let cb: f64 = (0..n).map(|k| s.c().get(&[i, k]) * s.b().get(&[j, k])).sum();
                    acc += cb / s.a().get(&[j]) * s.x().get(&[j, e]);
                }
                worst = worst.max((y.get(&[i, e]) - acc).abs());
            }
        }
    }
    Ok(verdict(worst, 1e-10))
}

fn bidirectional(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let mut worst = 0f64;
    for _ in 0..5 {
        worst = worst.max(bidirectional_identity_check(&scan(rng, 64, 4, 3)?));
    }
    Ok(verdict(worst, 1e-9))
}

fn permutation(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let s = scan(rng, 16, 4, 3)?;
    let y = ncssd_forward(&s, false)?.y;
    let mut perm: Vec<usize> = (0..16).collect();
    for i in (1..16).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let rows = |t: &Tensor<f64>| -> Tensor<f64> {
        let w = t.len() / t.dim(0);
        let mut shape = t.shape().to_vec();
        shape[0] = perm.len();
        Tensor::from_fn(shape, |k| t.data()[perm[k / w] * w + k % w]).expect("same size")
    };
    let sp = ScanInputs::new(rows(s.x()), rows(s.a()), rows(s.b()), rows(s.c()))?;
    let yp = ncssd_forward(&sp, false)?.y;
    let worst = yp.max_abs_diff(&rows(&y)).unwrap_or(f64::INFINITY);
    // summation order changes under permutation, so exact equality is not expected
    Ok(verdict(worst, 1e-12))
}

fn gradients(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let s = scan(rng, 8, 4, 4)?;
    let dy = uniform(rng, &[8, 4], -1.0, 1.0);
    let g = ncssd_backward(&s, &dy)?;
    let loss = |s: &ScanInputs<f64>| -> Result<f64> {
        let y = ncssd_forward(s, false)?.y;
        Ok(y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum())
    };
    let h = 1e-6;
    let mut worst = 0f64;
    for which in 0..4 {
        let analytic = [&g.dx, &g.da, &g.db, &g.dc][which];
        for k in 0..analytic.len() {
            let (x, a, b, c) = s.clone().into_parts();
            let mut parts = [x, a, b, c];
            let mut plus = parts.clone();
            plus[which].data_mut()[k] += h;
            parts[which].data_mut()[k] -= h;
            let [x, a, b, c] = plus;
            let lp = loss(&ScanInputs::new(x, a, b, c)?)?;
            let [x, a, b, c] = parts;
            let lm = loss(&ScanInputs::new(x, a, b, c)?)?;
            let numeric = (lp - lm) / (2.0 * h);
            let an = analytic.data()[k];
            worst = worst.max((an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-3));
        }
    }
    Ok(verdict(worst, 1e-4))
}

fn somer_rows(_: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let rows = [
        (42.93, 0.54, 196.20, 15.06, 0.02),
        (33.88, 2.25, 236.58, 2.75, 0.02),
        (51.71, 0.31, 109.93, 35.36, 0.2),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (fps, epe, mem, want, tol) in rows {
        let got = somer(fps, epe, mem)?;
        ok &= (got - want).abs() <= tol;
        detail.push(format!("{got:.3}"));
    }
    Ok((ok, detail.join(", ")))
}

fn correlation(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let f = uniform(rng, &[4, 8, 8], -1.0, 1.0);
    let g = uniform(rng, &[4, 8, 8], -1.0, 1.0);
    let vol = build_flow_volume(&f, &g)?;
    let pyr = build_pyramid(vol.clone(), FieldKind::Flow, 4)?;
    let mut worst = 0f64;
    // pooled levels keep the per-pixel mean of level 0
    for (k, level) in pyr.levels().iter().enumerate() {
        let area = 64 >> (2 * k);
        for p in 0..64 {
            let m0: f64 = vol.data()[p * 64..(p + 1) * 64].iter().sum::<f64>() / 64.0;
            let mk: f64 = level.data()[p * area..(p + 1) * area].iter().sum::<f64>() / area as f64;
            worst = worst.max((m0 - mk).abs());
        }
    }
    let est = FieldEstimate::zeros(FieldKind::Flow, 8, 8, 1)?;
    let feats = lookup_flow(&pyr, &est, 0)?;
    for p in 0..64 {
        worst = worst.max((feats.data()[p * 4] - vol.data()[p * 64 + p]).abs());
    }
    Ok(verdict(worst, 1e-12))
}

fn upsampling(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let field = Tensor::full([2, 5, 4], 1.75)?;
    let mask = uniform(rng, &[36, 5, 4], -8.0, 8.0);
    let up = convex_upsample(&field, &mask, 2, false)?;
    let worst = up.data().iter().map(|v| (v - 1.75).abs()).fold(0.0, f64::max);
    Ok(verdict(worst, 1e-12))
}

fn file_formats(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let flow: Tensor<f32> = uniform(rng, &[2, 5, 7], -40.0, 40.0).cast();
    let disp: Tensor<f32> = uniform(rng, &[1, 6, 3], 0.0, 90.0).cast();
    let cfg = tiny_config();
    let w = init_weights(&cfg, 9);
    let ok = decode_flo(&encode_flo(&flow)?)? == flow
        && decode_pfm(&encode_pfm(&disp)?)? == disp
        && ModelWeights::from_bytes(&w.to_bytes())? == w;
    Ok((ok, "flo, pfm and weight container round trips".into()))
}

fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.block.embed_dim = 8;
    cfg.block.state_dim = 4;
    cfg.block.num_heads = 2;
    cfg.block.num_blocks = 1;
    cfg.block.context_dim = 12;
    cfg.matching.hidden_dim = 4;
    cfg.matching.motion_dim = 4;
    cfg.matching.num_levels = 2;
    cfg.matching.radius = 1;
    cfg.matching.flow_iters = 2;
    cfg.matching.disparity_iters = 2;
    cfg
}

fn pipeline(rng: &mut Xoshiro256PlusPlus) -> Result<(bool, String)> {
    let cfg = tiny_config();
    let model = Model::<f32>::new(&init_weights(&cfg, 0))?;
    let left: Tensor<f32> = uniform(rng, &[3, 32, 32], -1.0, 1.0).cast();
    let right: Tensor<f32> = uniform(rng, &[3, 32, 32], -1.0, 1.0).cast();
    let pair = ImagePair::new(left, right)?;
    let mut ok = true;
    for task in [FieldKind::Flow, FieldKind::Disparity] {
        let req = TaskRequest::with_defaults(task, pair.clone(), &cfg);
        let a = model.estimate(&req)?;
        let b = model.estimate(&req)?;
        ok &= a == b && a.field.values().is_finite();
    }
    Ok((ok, "finite and bitwise repeatable on a 32x32 pair".into()))
}

const CHECKS: &[(&str, Check)] = &[
    ("causal linear/quadratic duality", causal_duality),
    ("non-causal kernel vs double loop", ncssd_oracle),
    ("bidirectional prefix identity", bidirectional),
    ("permutation equivariance", permutation),
    ("backward pass vs finite differences", gradients),
    ("somer on published rows", somer_rows),
    ("correlation pyramid and lookup", correlation),
    ("convex upsampling partition of unity", upsampling),
    ("file format round trips", file_formats),
    ("end-to-end determinism", pipeline),
];

/// Runs every check with a fixed seed. Errors inside a check count as
/// failures.
pub fn run_selftest() -> Vec<CheckResult> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x5e1f);
    CHECKS
        .iter()
        .map(|&(name, check)| match check(&mut rng) {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

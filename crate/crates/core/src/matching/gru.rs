use super::{hwc_to_chw, FieldEstimate, FieldKind, GruState};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{concat, sigmoid, silu, tanh, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateOutput<T> {
    pub state: GruState<T>,
    /// `[c, H, W]` increment to the field estimate.
    pub delta: Tensor<T>,
    /// `[9·s², H, W]` convex upsampling weights before the softmax.
    pub mask_logits: Tensor<T>,
}

/// Two conv + SiLU layers over `[lookup, estimate]`; `lookup` is the
/// `[H, W, C]` output of the lookup operators.
pub fn motion_features<T: Scalar>(
    lookup: &Tensor<T>,
    est: &FieldEstimate<T>,
    params: &Params<T>,
    prefix: &str,
) -> Result<Tensor<T>> {
    if lookup.rank() != 3 || (lookup.dim(0), lookup.dim(1)) != (est.height(), est.width()) {
        return Err(Error::dim(format!(
            "lookup features {:?} not aligned with {}x{} estimate",
            lookup.shape(),
            est.height(),
            est.width()
        )));
    }
    let x = concat(&[&hwc_to_chw(lookup)?, est.values()], 0)?;
    let m = silu(&params.conv(&x, &format!("{prefix}.motion.conv1"), 1)?);
    Ok(silu(&params.conv(&m, &format!("{prefix}.motion.conv2"), 1)?))
}

/// Convolutional GRU step on hidden `h: [Dh, H, W]` and input `x: [Dx, H, W]`:
/// `z = σ(Wz[h, x])`, `r = σ(Wr[h, x])`, `q = tanh(Wq[r⊙h, x])`,
/// `h' = (1 − z)⊙h + z⊙q`.
pub fn conv_gru<T: Scalar>(h: &Tensor<T>, x: &Tensor<T>, params: &Params<T>, prefix: &str) -> Result<Tensor<T>> {
    if h.rank() != 3 || x.rank() != 3 || h.shape()[1..] != x.shape()[1..] {
        return Err(Error::dim(format!(
            "GRU hidden {:?} and input {:?} are not spatially aligned",
            h.shape(),
            x.shape()
        )));
    }
    let hx = concat(&[h, x], 0)?;
    let z = sigmoid(&params.conv(&hx, &format!("{prefix}.convz"), 1)?);
    let r = sigmoid(&params.conv(&hx, &format!("{prefix}.convr"), 1)?);
    let rhx = concat(&[&r.mul(h)?, x], 0)?;
    let q = tanh(&params.conv(&rhx, &format!("{prefix}.convq"), 1)?);
    let one = T::one();
    let data = h
        .data()
        .iter()
        .zip(z.data())
        .zip(q.data())
        .map(|((&hv, &zv), &qv)| (one - zv) * hv + zv * qv)
        .collect();
    Tensor::new(h.shape().to_vec(), data)
}

/// Delta and mask heads on the updated hidden state.
pub fn update_heads<T: Scalar>(h: &Tensor<T>, params: &Params<T>, prefix: &str) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = silu(&params.conv(h, &format!("{prefix}.delta.conv1"), 1)?);
    let delta = params.conv(&d, &format!("{prefix}.delta.conv2"), 1)?;
    let m = silu(&params.conv(h, &format!("{prefix}.mask.conv1"), 1)?);
    let mask = params.conv(&m, &format!("{prefix}.mask.conv2"), 1)?;
    Ok((delta, mask))
}

/// One single-resolution refinement step: motion encoding, GRU update of the
/// finest hidden state with `x = [motion, context]`, then the output heads.
/// Uses `{prefix}.gru` for flow and `{prefix}.gru0` for disparity.
pub fn gru_update<T: Scalar>(
    state: &GruState<T>,
    lookup: &Tensor<T>,
    context: &Tensor<T>,
    est: &FieldEstimate<T>,
    params: &Params<T>,
    prefix: &str,
) -> Result<UpdateOutput<T>> {
    let motion = motion_features(lookup, est, params, prefix)?;
    let x = concat(&[&motion, context], 0)?;
    let gru = match est.kind() {
        FieldKind::Flow => "gru",
        FieldKind::Disparity => "gru0",
    };
    let h = conv_gru(state.finest(), &x, params, &format!("{prefix}.{gru}"))?;
    let (delta, mask_logits) = update_heads(&h, params, prefix)?;
    let mut hidden = state.hidden.clone();
    hidden[0] = h;
    Ok(UpdateOutput {
        state: GruState { hidden },
        delta,
        mask_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random(shape: &[usize], scale: f64, rng: &mut Xoshiro256PlusPlus) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale)).unwrap()
    }

    fn add_conv(p: &mut Params<f64>, name: &str, co: usize, ci: usize, k: usize, rng: &mut Xoshiro256PlusPlus) {
        p.insert(format!("{name}.weight"), random(&[co, ci, k, k], 0.5, rng));
        p.insert(format!("{name}.bias"), random(&[co], 0.5, rng));
    }

    // (hd, dx) GRU with random weights under "g"
    fn gru_params(hd: usize, dx: usize, seed: u64) -> Params<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut p = Params::new();
        for gate in ["convz", "convr", "convq"] {
            add_conv(&mut p, &format!("g.{gate}"), hd, hd + dx, 3, &mut rng);
        }
        p
    }

    // 3x3 same-padded conv as plain loops
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (ci, h, wd) = (x.dim(0), x.dim(1), x.dim(2));
        let co = w.dim(0);
        let k = w.dim(2) as i64;
        let pad = k / 2;
        Tensor::from_fn([co, h, wd], |idx| {
            let (o, y, xx) = (idx / (h * wd), (idx / wd) % h, idx % wd);
            let mut s = b.get(&[o]);
            for c in 0..ci {
                for ky in 0..k {
                    for kx in 0..k {
                        let (sy, sx) = (y as i64 + ky - pad, xx as i64 + kx - pad);
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                            s += w.get(&[o, c, ky as usize, kx as usize]) * x.get(&[c, sy as usize, sx as usize]);
                        }
                    }
                }
            }
            s
        })
        .unwrap()
    }

    #[test]
    fn gru_matches_per_gate_oracle() {
        let (hd, dx, h, w) = (3, 2, 4, 5);
        let p = gru_params(hd, dx, 1);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let hid = random(&[hd, h, w], 1.0, &mut rng);
        let x = random(&[dx, h, w], 1.0, &mut rng);
        let got = conv_gru(&hid, &x, &p, "g").unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let g = |n: &str| (p.get(&format!("g.{n}.weight")).unwrap(), p.get(&format!("g.{n}.bias")).unwrap());
        let hx = concat(&[&hid, &x], 0).unwrap();
        let (wz, bz) = g("convz");
        let (wr, br) = g("convr");
        let (wq, bq) = g("convq");
        let z = conv_oracle(&hx, wz, bz);
        let r = conv_oracle(&hx, wr, br);
        let mut rh = hid.clone();
        for (v, rv) in rh.data_mut().iter_mut().zip(r.data()) {
            *v *= sig(*rv);
        }
        let q = conv_oracle(&concat(&[&rh, &x], 0).unwrap(), wq, bq);
        for k in 0..hid.len() {
            let zk = sig(z.data()[k]);
            let e = (1.0 - zk) * hid.data()[k] + zk * q.data()[k].tanh();
            assert!((got.data()[k] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_halve_hidden() {
        let mut p = gru_params(2, 2, 3);
        for gate in ["convz", "convr", "convq"] {
            for part in ["weight", "bias"] {
                p.get_mut(&format!("g.{gate}.{part}")).unwrap().data_mut().fill(0.0);
            }
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let hid = random(&[2, 3, 3], 2.0, &mut rng);
        let x = random(&[2, 3, 3], 1.0, &mut rng);
        let got = conv_gru(&hid, &x, &p, "g").unwrap();
        assert_eq!(got, hid.scale(0.5));
    }

    #[test]
    fn saturated_update_gate_replaces_hidden() {
        let mut p = gru_params(2, 1, 5);
        p.get_mut("g.convz.weight").unwrap().data_mut().fill(0.0);
        p.get_mut("g.convz.bias").unwrap().data_mut().fill(1e3);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
        let hid = random(&[2, 3, 4], 1.0, &mut rng);
        let x = random(&[1, 3, 4], 1.0, &mut rng);
        let got = conv_gru(&hid, &x, &p, "g").unwrap();
        let r = sigmoid(&p.conv(&concat(&[&hid, &x], 0).unwrap(), "g.convr", 1).unwrap());
        let rhx = concat(&[&r.mul(&hid).unwrap(), &x], 0).unwrap();
        let q = tanh(&p.conv(&rhx, "g.convq", 1).unwrap());
        assert_eq!(got, q);
    }

    #[test]
    fn hidden_stays_bounded() {
        let p = gru_params(3, 2, 7);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        for scale in [0.5, 1.0, 4.0] {
            let hid = random(&[3, 4, 4], scale, &mut rng);
            let x = random(&[2, 4, 4], 3.0, &mut rng);
            let got = conv_gru(&hid, &x, &p, "g").unwrap();
            assert!(got.max_abs() <= hid.max_abs().max(1.0));
        }
    }

    #[test]
    fn update_produces_head_shapes() {
        let (hd, motion, ci, lookup_c, s) = (4, 3, 2, 5, 2);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        let mut p = Params::new();
        add_conv(&mut p, "flow.motion.conv1", motion, lookup_c + 2, 1, &mut rng);
        add_conv(&mut p, "flow.motion.conv2", motion, motion, 3, &mut rng);
        for gate in ["convz", "convr", "convq"] {
            add_conv(&mut p, &format!("flow.gru.{gate}"), hd, hd + motion + ci, 3, &mut rng);
        }
        add_conv(&mut p, "flow.delta.conv1", hd, hd, 3, &mut rng);
        add_conv(&mut p, "flow.delta.conv2", 2, hd, 3, &mut rng);
        add_conv(&mut p, "flow.mask.conv1", hd, hd, 3, &mut rng);
        add_conv(&mut p, "flow.mask.conv2", 9 * s * s, hd, 1, &mut rng);
        let state = GruState::new(vec![random(&[hd, 3, 4], 1.0, &mut rng)]).unwrap();
        let lookup = random(&[3, 4, lookup_c], 1.0, &mut rng);
        let ctx = random(&[ci, 3, 4], 1.0, &mut rng);
        let est = FieldEstimate::zeros(FieldKind::Flow, 3, 4, s).unwrap();
        let out = gru_update(&state, &lookup, &ctx, &est, &p, "flow").unwrap();
        assert_eq!(out.delta.shape(), &[2, 3, 4]);
        assert_eq!(out.mask_logits.shape(), &[36, 3, 4]);
        assert_eq!(out.state.finest().shape(), &[hd, 3, 4]);

        let misaligned = random(&[3, 5, lookup_c], 1.0, &mut rng);
        assert!(gru_update(&state, &misaligned, &ctx, &est, &p, "flow").is_err());
    }
}

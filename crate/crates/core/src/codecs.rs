//! File formats: Middlebury `.flo`, little-endian greyscale PFM, 8-bit
//! PNG/PPM input, and colour visualizations.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{CodecError, Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const FLO_MAGIC: f32 = 202021.25;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes a `[2, H, W]` flow field as `.flo`: magic, i32 width, i32 height,
/// then interleaved `(u, v)` f32 rows.
pub fn encode_flo(flow: &Tensor<f32>) -> Result<Vec<u8>> {
    if flow.rank() != 3 || flow.dim(0) != 2 {
        return Err(Error::dim(format!("flow must be [2, H, W], got {:?}", flow.shape())));
    }
    let (h, w) = (flow.dim(1), flow.dim(2));
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    let (u, v) = flow.data().split_at(h * w);
    for (a, b) in u.iter().zip(v) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<Tensor<f32>, CodecError> {
    const F: &str = ".flo";
    if bytes.len() < 12 {
        return Err(CodecError::Truncated {
            format: F,
            expected: 12,
            found: bytes.len(),
        });
    }
    let word = |k: usize| -> [u8; 4] { bytes[4 * k..4 * k + 4].try_into().unwrap() };
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(CodecError::BadMagic { format: F });
    }
    let (w, h) = (i32::from_le_bytes(word(1)), i32::from_le_bytes(word(2)));
    if w <= 0 || h <= 0 {
        return Err(CodecError::BadHeader {
            format: F,
            detail: format!("dimensions {w}x{h}"),
        });
    }
    let n = (w as usize) * (h as usize);
    let payload = &bytes[12..];
    if payload.len() != 8 * n {
        return Err(CodecError::Truncated {
            format: F,
            expected: 8 * n,
            found: payload.len(),
        });
    }
    let mut data = vec![0f32; 2 * n];
    for (p, pair) in payload.chunks_exact(8).enumerate() {
        data[p] = f32::from_le_bytes(pair[..4].try_into().unwrap());
        data[n + p] = f32::from_le_bytes(pair[4..].try_into().unwrap());
    }
    Ok(Tensor::new([2, h as usize, w as usize], data).expect("positive extents"))
}

pub fn write_flow_flo(path: impl AsRef<Path>, flow: &Tensor<f32>) -> Result<()> {
    write_file(path.as_ref(), &encode_flo(flow)?)
}

pub fn read_flow_flo(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    Ok(decode_flo(&read_file(path.as_ref())?)?)
}

/// Encodes a `[1, H, W]` map as greyscale PFM with a negative
/// (little-endian) scale; rows are written bottom to top.
pub fn encode_pfm(disp: &Tensor<f32>) -> Result<Vec<u8>> {
    if disp.rank() != 3 || disp.dim(0) != 1 {
        return Err(Error::dim(format!("disparity must be [1, H, W], got {:?}", disp.shape())));
    }
    let (h, w) = (disp.dim(1), disp.dim(2));
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for row in disp.data().chunks(w).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f32>, CodecError> {
    const F: &str = "PFM";
    let header = |detail: &str| CodecError::BadHeader {
        format: F,
        detail: detail.to_string(),
    };
    // header tokens: magic, width, height, scale
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(header("incomplete header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| header("non-ASCII header"))?);
    }
    match fields[0] {
        "Pf" => {}
        "PF" => return Err(header("three-channel PFM is not a disparity map")),
        _ => return Err(CodecError::BadMagic { format: F }),
    }
    let parse = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    let (Some(w), Some(h)) = (parse(fields[1]), parse(fields[2])) else {
        return Err(header("bad dimensions"));
    };
    let scale: f64 = fields[3].parse().map_err(|_| header("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(header("bad scale"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    let n = w * h;
    if payload.len() != 4 * n {
        return Err(CodecError::Truncated {
            format: F,
            expected: 4 * n,
            found: payload.len(),
        });
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; n];
    for (k, c) in payload.chunks_exact(4).enumerate() {
        let b: [u8; 4] = c.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (k / w, k % w);
        data[(h - 1 - file_row) * w + col] = v;
    }
    Ok(Tensor::new([1, h, w], data).expect("positive extents"))
}

pub fn write_disparity_pfm(path: impl AsRef<Path>, disp: &Tensor<f32>) -> Result<()> {
    write_file(path.as_ref(), &encode_pfm(disp)?)
}

pub fn read_disparity_pfm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    Ok(decode_pfm(&read_file(path.as_ref())?)?)
}

/// Reads an 8-bit PNG or binary PPM as `[3, H, W]` scaled to `[-1, 1]`.
pub fn read_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let img = image::load_from_memory(&bytes).map_err(CodecError::from)?.to_rgb8();
    Ok(rgb_to_tensor(&img))
}

pub(crate) fn rgb_to_tensor<T: Scalar>(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn([3, h, w], |k| {
        let (c, p) = (k / (h * w), k % (h * w));
        T::lit(2.0 * raw[3 * p + c] as f64 / 255.0 - 1.0)
    })
    .expect("decoded images are non-empty")
}

/// Reads a validity mask: any non-zero pixel of the (greyscale-converted)
/// image is valid.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = read_file(path.as_ref())?;
    let img = image::load_from_memory(&bytes).map_err(CodecError::from)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.as_raw().iter().map(|&v| v != 0).collect()))
}

fn save_rgb(path: &Path, w: usize, h: usize, rgb: Vec<u8>) -> Result<()> {
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, rgb).expect("buffer sized to image");
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Codec(other.into()),
    })
}

// Hue wheel with segment lengths red-yellow 15, yellow-green 6, green-cyan 4,
// cyan-blue 11, blue-magenta 13, magenta-red 6.
fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(55);
    let ramp = |n: usize, k: usize| k as f64 / n as f64;
    for k in 0..15 {
        wheel.push([1.0, ramp(15, k), 0.0]);
    }
    for k in 0..6 {
        wheel.push([1.0 - ramp(6, k), 1.0, 0.0]);
    }
    for k in 0..4 {
        wheel.push([0.0, 1.0, ramp(4, k)]);
    }
    for k in 0..11 {
        wheel.push([0.0, 1.0 - ramp(11, k), 1.0]);
    }
    for k in 0..13 {
        wheel.push([ramp(13, k), 0.0, 1.0]);
    }
    for k in 0..6 {
        wheel.push([1.0, 0.0, 1.0 - ramp(6, k)]);
    }
    wheel
}

/// RGB bytes for a `[2, H, W]` flow: hue from direction, saturation from
/// magnitude normalized by the largest finite magnitude.
pub fn flow_to_rgb(flow: &Tensor<f32>) -> Result<Vec<u8>> {
    if flow.rank() != 3 || flow.dim(0) != 2 {
        return Err(Error::dim(format!("flow must be [2, H, W], got {:?}", flow.shape())));
    }
    let n = flow.dim(1) * flow.dim(2);
    let (u, v) = flow.data().split_at(n);
    let max_mag = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| (a as f64).hypot(b as f64))
        .filter(|m| m.is_finite())
        .fold(0.0, f64::max)
        .max(1e-9);
    let wheel = color_wheel();
    let ncols = wheel.len() as f64;
    let mut out = Vec::with_capacity(3 * n);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64 / max_mag, b as f64 / max_mag);
        if !a.is_finite() || !b.is_finite() {
            out.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let rad = a.hypot(b).min(1.0);
        let angle = (-b).atan2(-a) / std::f64::consts::PI;
        let fk = (angle + 1.0) / 2.0 * (ncols - 1.0);
        let k0 = fk.floor() as usize % wheel.len();
        let k1 = (k0 + 1) % wheel.len();
        let f = fk - fk.floor();
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            let col = 1.0 - rad * (1.0 - col);
            out.push((255.0 * col).round() as u8);
        }
    }
    Ok(out)
}

/// RGB bytes for a `[1, H, W]` disparity map through a dark-blue to yellow
/// ramp scaled to the largest finite value.
pub fn disparity_to_rgb(disp: &Tensor<f32>) -> Result<Vec<u8>> {
    if disp.rank() != 3 || disp.dim(0) != 1 {
        return Err(Error::dim(format!("disparity must be [1, H, W], got {:?}", disp.shape())));
    }
    const STOPS: [[f64; 3]; 5] = [
        [0.05, 0.03, 0.25],
        [0.35, 0.10, 0.55],
        [0.80, 0.25, 0.40],
        [0.98, 0.60, 0.15],
        [0.99, 0.95, 0.45],
    ];
    let max = disp
        .data()
        .iter()
        .filter(|v| v.is_finite())
        .fold(0f64, |m, &v| m.max(v as f64))
        .max(1e-9);
    let mut out = Vec::with_capacity(3 * disp.len());
    for &v in disp.data() {
        let t = if v.is_finite() { (v as f64 / max).clamp(0.0, 1.0) } else { 0.0 };
        let x = t * (STOPS.len() - 1) as f64;
        let k = (x.floor() as usize).min(STOPS.len() - 2);
        let f = x - k as f64;
        for c in 0..3 {
            let col = (1.0 - f) * STOPS[k][c] + f * STOPS[k + 1][c];
            out.push((255.0 * col).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_flow_visualization(path: impl AsRef<Path>, flow: &Tensor<f32>) -> Result<()> {
    let rgb = flow_to_rgb(flow)?;
    save_rgb(path.as_ref(), flow.dim(2), flow.dim(1), rgb)
}

pub fn write_disparity_visualization(path: impl AsRef<Path>, disp: &Tensor<f32>) -> Result<()> {
    let rgb = disparity_to_rgb(disp)?;
    save_rgb(path.as_ref(), disp.dim(2), disp.dim(1), rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random(shape: [usize; 3], seed: u64) -> Tensor<f32> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-50.0..50.0)).unwrap()
    }

    #[test]
    fn one_pixel_flo_is_twenty_bytes() {
        let flow = Tensor::from_f64([2, 1, 1], &[3.0, -2.0]).unwrap();
        let bytes = encode_flo(&flow).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(&[0x50, 0x49, 0x45, 0x48]); // "PIEH" = 202021.25f32
        expect.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0]);
        expect.extend_from_slice(&[0x00, 0x00, 0x40, 0x40]); // 3.0
        expect.extend_from_slice(&[0x00, 0x00, 0x00, 0xc0]); // -2.0
        assert_eq!(bytes, expect);
        assert_eq!(decode_flo(&bytes).unwrap(), flow);
    }

    #[test]
    fn flo_round_trip_is_bitwise() {
        let mut flow = random([2, 7, 5], 1);
        flow.data_mut()[3] = f32::from_bits(0x7fc0_1234);
        let back = decode_flo(&encode_flo(&flow).unwrap()).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&flow));
    }

    #[test]
    fn flo_errors() {
        let good = encode_flo(&random([2, 2, 3], 2)).unwrap();
        let mut bad = good.clone();
        bad[0] ^= 1;
        assert!(matches!(decode_flo(&bad), Err(CodecError::BadMagic { .. })));
        assert!(matches!(decode_flo(&good[..good.len() - 1]), Err(CodecError::Truncated { .. })));
        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&(-1i32).to_le_bytes());
        assert!(matches!(decode_flo(&bad), Err(CodecError::BadHeader { .. })));
    }

    #[test]
    fn pfm_round_trip_and_orientation() {
        let mut disp = random([1, 4, 3], 3);
        for x in 0..3 {
            disp.set(&[0, 0, x], 1000.0 + x as f32);
        }
        let bytes = encode_pfm(&disp).unwrap();
        let header = b"Pf\n3 4\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        // the top image row is the last row in the file
        let last = &bytes[bytes.len() - 12..];
        assert_eq!(f32::from_le_bytes(last[..4].try_into().unwrap()), 1000.0);
        assert_eq!(decode_pfm(&bytes).unwrap(), disp);
    }

    #[test]
    fn pfm_big_endian_and_errors() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-4.0f32).to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().data(), &[1.5, -4.0]);
        assert!(matches!(decode_pfm(b"P5\n1 1\n-1.0\n\0\0\0\0"), Err(CodecError::BadMagic { .. })));
        assert!(matches!(decode_pfm(b"Pf\n1 1\n-1.0\n\0\0"), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode_pfm(b"Pf\n0 1\n-1.0\n"), Err(CodecError::BadHeader { .. })));
    }

    #[test]
    fn images_normalize_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::<Rgb<u8>, _>::from_fn(3, 2, |x, y| Rgb([0, 255, (x * 50 + y) as u8]));
        for name in ["a.png", "a.ppm"] {
            let path = dir.path().join(name);
            img.save(&path).unwrap();
            let t = read_image::<f64>(&path).unwrap();
            assert_eq!(t.shape(), &[3, 2, 3]);
            assert_eq!(t.get(&[0, 1, 2]), -1.0);
            assert_eq!(t.get(&[1, 0, 0]), 1.0);
            assert!((t.get(&[2, 1, 2]) - (2.0 * 101.0 / 255.0 - 1.0)).abs() < 1e-15);
        }
        assert!(read_image::<f32>(dir.path().join("nope.png")).unwrap_err().is_io());
    }

    #[test]
    fn visualizations_write_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let flow = random([2, 6, 8], 4);
        write_flow_visualization(dir.path().join("f.png"), &flow).unwrap();
        let disp = random([1, 6, 8], 5).map(f32::abs);
        write_disparity_visualization(dir.path().join("d.png"), &disp).unwrap();
        let back = image::open(dir.path().join("f.png")).unwrap();
        assert_eq!((back.width(), back.height()), (8, 6));
        // zero flow is white
        let zero = Tensor::zeros([2, 1, 1]).unwrap();
        assert_eq!(flow_to_rgb(&zero).unwrap(), vec![255, 255, 255]);
    }
}

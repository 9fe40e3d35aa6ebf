//! Reconstruction-quality metrics and the rate-distortion sweep.

mod frechet;
mod plot;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::codec::payload_len;
use crate::error::{Error, Result};
use crate::model::TokenizerModel;
use crate::ImageTensor;

pub use frechet::{frechet_distance_from_stats, frechet_feature_distance, GaussianStats};
pub use plot::plot_rd_curves;

/// Uniform-weight SSIM window side length.
pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid_input("image shape mismatch"));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_error(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Mean squared difference.
pub fn l2_error(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]` (MAX = 1):
/// `10 * log10(1 / MSE)`. Identical images yield `f64::INFINITY`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let mse = l2_error(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn to_grayscale(img: &ImageTensor) -> Vec<f64> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = vec![0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f64;
            for ch in 0..c {
                acc += img.get(y, x, ch) as f64;
            }
            out[y * w + x] = acc / c as f64;
        }
    }
    out
}

/// Mean local SSIM over all fully contained 8x8 windows with uniform
/// weighting, on the channel-mean grayscale images.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid_input(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let ga = to_grayscale(a);
    let gb = to_grayscale(b);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;

    let mut total = 0f64;
    let mut windows = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0f64, 0f64, 0f64, 0f64, 0f64);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let va = ga[(y0 + dy) * w + x0 + dx];
                    let vb = gb[(y0 + dy) * w + x0 + dx];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let mu_a = sa / n;
            let mu_b = sb / n;
            let var_a = saa / n - mu_a * mu_a;
            let var_b = sbb / n - mu_b * mu_b;
            let cov = sab / n - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// One row of a rate-distortion sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RDPoint {
    pub n_tokens: usize,
    pub payload_bytes: usize,
    pub l1: f64,
    pub l2: f64,
    /// PSNR of the dataset-mean MSE, so `psnr = 10*log10(1/l2)` holds.
    pub psnr: f64,
    pub ssim: f64,
    /// Feature-space Fréchet distance between originals and
    /// reconstructions, when computed.
    pub ffd: Option<f64>,
}

/// Decode every image at each prefix length and average the metrics.
///
/// Images are tokenized once; each quality level decodes a prefix of the
/// same sequence. With `with_ffd`, mean-pooled encoder latents serve as the
/// feature extractor for the Fréchet distance.
pub fn rd_sweep(
    model: &TokenizerModel,
    images: &[ImageTensor],
    lengths: &[usize],
    with_ffd: bool,
) -> Result<Vec<RDPoint>> {
    if images.is_empty() {
        return Err(Error::invalid_input("rd_sweep needs a non-empty dataset"));
    }
    if lengths.is_empty() {
        return Err(Error::invalid_input("rd_sweep needs at least one length"));
    }
    let n_max = model.config().n_latent_tokens;
    for &n in lengths {
        if n == 0 || n > n_max {
            return Err(Error::invalid_input(format!("sweep length {n} out of range 1..={n_max}")));
        }
    }
    let bits = model.config().bits_per_token();
    const CHUNK: usize = 32;

    let mut sequences = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        sequences.extend(model.tokenize_batch(chunk)?);
    }
    let original_features = if with_ffd { Some(model.pooled_latent_features(images, CHUNK)?) } else { None };

    let mut points = Vec::with_capacity(lengths.len());
    for &n in lengths {
        let mut sum_l1 = 0f64;
        let mut sum_l2 = 0f64;
        let mut sum_ssim = 0f64;
        let mut recons = Vec::with_capacity(images.len());
        for (img_chunk, seq_chunk) in images.chunks(CHUNK).zip(sequences.chunks(CHUNK)) {
            let prefixes: Vec<_> = seq_chunk.iter().map(|q| q.prefix(n)).collect::<Result<_>>()?;
            let decoded = model.decode_batch(&prefixes)?;
            for (orig, recon) in img_chunk.iter().zip(&decoded) {
                sum_l1 += l1_error(orig, recon)?;
                sum_l2 += l2_error(orig, recon)?;
                sum_ssim += ssim(orig, recon)?;
            }
            recons.extend(decoded);
        }
        let count = images.len() as f64;
        let l2 = sum_l2 / count;
        let ffd = match &original_features {
            Some(orig_feats) => {
                let recon_feats = model.pooled_latent_features(&recons, CHUNK)?;
                Some(frechet_feature_distance(orig_feats, &recon_feats)?)
            }
            None => None,
        };
        points.push(RDPoint {
            n_tokens: n,
            payload_bytes: payload_len(n, bits),
            l1: sum_l1 / count,
            l2,
            psnr: if l2 == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / l2).log10() },
            ssim: sum_ssim / count,
            ffd,
        });
    }
    Ok(points)
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.9}")
    }
}

/// Write sweep rows as CSV with header
/// `n_tokens,payload_bytes,l1,l2,psnr,ssim,ffd`.
pub fn write_rd_csv(points: &[RDPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("n_tokens,payload_bytes,l1,l2,psnr,ssim,ffd\n");
    for p in points {
        let ffd = p.ffd.map(fmt_metric).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.n_tokens,
            p.payload_bytes,
            fmt_metric(p.l1),
            fmt_metric(p.l2),
            fmt_metric(p.psnr),
            fmt_metric(p.ssim),
            ffd
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Mean metrics of one reconstruction directory against the originals.
#[derive(Debug, Clone)]
pub struct MethodMetrics {
    pub method: String,
    pub pairs: usize,
    pub l1: f64,
    pub l2: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Filenames skipped because a pair was missing or unreadable.
    pub skipped: Vec<String>,
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::ingestion(format!("cannot read {dir:?}: {e}")))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if path.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn compare_one(dir: &Path, originals: &BTreeMap<String, std::path::PathBuf>) -> Result<MethodMetrics> {
    let method = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("recon")
        .to_string();
    let files = image_files(dir)?;
    let mut m = MethodMetrics { method, pairs: 0, l1: 0.0, l2: 0.0, psnr: 0.0, ssim: 0.0, skipped: vec![] };
    for (name, orig_path) in originals {
        let Some(recon_path) = files.get(name) else {
            m.skipped.push(name.clone());
            continue;
        };
        let (orig, recon) = match (ImageTensor::load(orig_path), ImageTensor::load(recon_path)) {
            (Ok(a), Ok(b)) if a.same_shape(&b) => (a, b),
            _ => {
                m.skipped.push(name.clone());
                continue;
            }
        };
        m.l1 += l1_error(&orig, &recon)?;
        m.l2 += l2_error(&orig, &recon)?;
        m.psnr += psnr(&orig, &recon)?;
        m.ssim += ssim(&orig, &recon)?;
        m.pairs += 1;
    }
    if m.pairs > 0 {
        let n = m.pairs as f64;
        m.l1 /= n;
        m.l2 /= n;
        m.psnr /= n;
        m.ssim /= n;
    }
    Ok(m)
}

/// Compare externally produced reconstruction directories against a
/// directory of originals, pairing files by name. Missing or mismatched
/// pairs are skipped and reported in `skipped`.
pub fn compare_external(
    recon_dirs: &[&Path],
    originals_dir: &Path,
) -> Result<Vec<MethodMetrics>> {
    let originals = image_files(originals_dir)?;
    recon_dirs.iter().map(|d| compare_one(d, &originals)).collect()
}

/// CSV for [`compare_external`] results: `method,pairs,l1,l2,psnr,ssim`.
pub fn write_compare_csv(rows: &[MethodMetrics], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("method,pairs,l1,l2,psnr,ssim\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.pairs,
            fmt_metric(r.l1),
            fmt_metric(r.l2),
            fmt_metric(r.psnr),
            fmt_metric(r.ssim)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(h: usize, w: usize, v: f32) -> ImageTensor {
        ImageTensor::from_data(h, w, 3, vec![v; h * w * 3]).unwrap()
    }

    fn ramp_image(h: usize, w: usize) -> ImageTensor {
        let mut img = ImageTensor::zeros(h, w, 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.set(y, x, c, ((y * w + x) % 7) as f32 / 10.0 + 0.1 * c as f32);
                }
            }
        }
        img
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = ramp_image(16, 16);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn psnr_closed_forms() {
        // Offset 0.1 everywhere: MSE = 0.01 -> 20 dB.
        let a = constant_image(16, 16, 0.3);
        let b = constant_image(16, 16, 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        // Offset 0.5: MSE = 0.25 -> 10*log10(4) = 6.0206 dB.
        let c = constant_image(16, 16, 0.8);
        let expected = 10.0 * (1.0 / 0.25f64).log10();
        assert!((psnr(&a, &c).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn l1_l2_closed_forms() {
        let a = ramp_image(8, 8);
        assert_eq!(l1_error(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_error(&a, &a).unwrap(), 0.0);
        let b = constant_image(8, 8, 0.2);
        let c = constant_image(8, 8, 0.3);
        assert!((l1_error(&b, &c).unwrap() - 0.1).abs() < 1e-7);
        assert!((l2_error(&b, &c).unwrap() - 0.01).abs() < 1e-8);
    }

    #[test]
    fn psnr_shape_mismatch_rejected() {
        let a = ramp_image(8, 8);
        let b = ramp_image(8, 9);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = ramp_image(16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = ramp_image(16, 16);
        let b = constant_image(16, 16, 0.4);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_of_inverted_binary_is_negative() {
        // Half zeros, half ones; the inverse anti-correlates.
        let mut a = ImageTensor::zeros(8, 8, 1);
        for y in 0..8 {
            for x in 0..8 {
                a.set(y, x, 0, if x < 4 { 0.0 } else { 1.0 });
            }
        }
        let inv_data: Vec<f32> = a.data().iter().map(|v| 1.0 - v).collect();
        let b = ImageTensor::from_data(8, 8, 1, inv_data).unwrap();
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_matches_brute_force_single_window() {
        // 8x8 image = exactly one window; recompute by the definition.
        let a = ramp_image(8, 8);
        let b = {
            let mut img = ramp_image(8, 8);
            for y in 0..8 {
                for x in 0..8 {
                    let v = img.get(y, x, 0);
                    img.set(y, x, 0, (v * 0.8 + 0.05).min(1.0));
                }
            }
            img
        };
        let (ga, gb) = (to_grayscale(&a), to_grayscale(&b));
        let n = 64.0;
        let mu_a: f64 = ga.iter().sum::<f64>() / n;
        let mu_b: f64 = gb.iter().sum::<f64>() / n;
        let var_a: f64 = ga.iter().map(|v| (v - mu_a) * (v - mu_a)).sum::<f64>() / n;
        let var_b: f64 = gb.iter().map(|v| (v - mu_b) * (v - mu_b)).sum::<f64>() / n;
        let cov: f64 = ga.iter().zip(&gb).map(|(x, y)| (x - mu_a) * (y - mu_b)).sum::<f64>() / n;
        let expected = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_too_small_images() {
        let a = ramp_image(7, 8);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn csv_serializes_infinity_as_inf() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rd.csv");
        let points = vec![RDPoint {
            n_tokens: 32,
            payload_bytes: 48,
            l1: 0.0,
            l2: 0.0,
            psnr: f64::INFINITY,
            ssim: 1.0,
            ffd: None,
        }];
        write_rd_csv(&points, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("n_tokens,payload_bytes,l1,l2,psnr,ssim,ffd\n"));
        assert!(text.contains(",inf,"));
    }
}

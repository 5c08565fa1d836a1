//! File I/O, preprocessing, and the synthetic two-domain benchmark.

pub mod container;
pub mod dataset;
pub mod png;
pub mod pnm;
pub mod pts;
pub mod synth;

use std::path::Path;

use crate::error::{Error, Result};
use crate::imageops::Image;
use crate::warpfield::LandmarkSet;

/// Which side of the domain gap a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// One image with optional landmarks, remembering its pre-resize size so
/// predictions can be mapped back to original coordinates.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    /// In original-image pixel coordinates.
    pub landmarks: Option<LandmarkSet>,
    pub domain: Domain,
    /// (height, width) before any preprocessing.
    pub original_size: (usize, usize),
}

impl Sample {
    pub fn new(image: Image, landmarks: Option<LandmarkSet>, domain: Domain) -> Self {
        let original_size = (image.height(), image.width());
        Self {
            image,
            landmarks,
            domain,
            original_size,
        }
    }
}

/// Loads PGM/PPM/PNG, sniffing the magic bytes rather than trusting the
/// extension. Values are scaled into `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        png::decode_png(&bytes, path)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        pnm::decode_pnm(&bytes, path)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            msg: "unrecognized image format (expected PNG, P5 PGM, or P6 PPM)".into(),
        })
    }
}

/// Writes PNG/PGM/PPM according to the extension. PGM targets are
/// grayscaled; PPM targets get gray replicated to three channels.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => png::save_png(img, path),
        "pgm" => pnm::save_pnm(&img.to_grayscale(), path),
        "ppm" => {
            if img.channels() == 3 {
                pnm::save_pnm(img, path)
            } else {
                let mut rgb = Image::fill(img.height(), img.width(), 3, 0.0);
                for v in 0..img.height() {
                    for u in 0..img.width() {
                        let g = img.get(v, u, 0);
                        for c in 0..3 {
                            rgb.set(v, u, c, g);
                        }
                    }
                }
                pnm::save_pnm(&rgb, path)
            }
        }
        other => Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("cannot infer image format from extension '{other}'"),
        }),
    }
}

/// Resizes to `side`×`side` (optionally grayscaling) and rescales landmarks
/// by `(S/W, S/H)`. The original size stays on the sample.
pub fn preprocess(sample: &Sample, side: usize, grayscale: bool) -> Result<Sample> {
    let (h, w) = (sample.image.height(), sample.image.width());
    let mut image = sample.image.resize_bilinear(side, side)?;
    if grayscale {
        image = image.to_grayscale();
    }
    let landmarks = match &sample.landmarks {
        Some(lms) => Some(LandmarkSet::new(
            lms.points()
                .iter()
                .map(|p| [p[0] * side as f64 / w as f64, p[1] * side as f64 / h as f64])
                .collect(),
        )?),
        None => None,
    };
    Ok(Sample {
        image,
        landmarks,
        domain: sample.domain,
        original_size: sample.original_size,
    })
}

/// Maps landmarks predicted at `side`×`side` scale back to a sample's
/// original pixel coordinates.
pub fn to_original_coords(lms: &LandmarkSet, side: usize, original_size: (usize, usize)) -> Result<LandmarkSet> {
    let (h, w) = original_size;
    LandmarkSet::new(
        lms.points()
            .iter()
            .map(|p| [p[0] * w as f64 / side as f64, p[1] * h as f64 / side as f64])
            .collect(),
    )
}

/// Marker colors for [`overlay`]: predictions red, ground truth green.
pub const PRED_COLOR: [f32; 3] = [0.9, 0.1, 0.1];
pub const GT_COLOR: [f32; 3] = [0.1, 0.8, 0.1];

/// Draws 3×3 markers for each landmark set (clipped at borders) onto an RGB
/// copy of `img`. Pixels outside marker blocks are untouched.
pub fn overlay_image(img: &Image, layers: &[(&LandmarkSet, [f32; 3])]) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = Image::fill(h, w, 3, 0.0);
    for v in 0..h {
        for u in 0..w {
            for c in 0..3 {
                let val = if img.channels() == 1 { img.get(v, u, 0) } else { img.get(v, u, c) };
                out.set(v, u, c, val);
            }
        }
    }
    for (lms, color) in layers {
        for p in lms.points() {
            let cu = p[0].round() as isize;
            let cv = p[1].round() as isize;
            for dv in -1..=1isize {
                for du in -1..=1isize {
                    let (uu, vv) = (cu + du, cv + dv);
                    if uu >= 0 && vv >= 0 && (uu as usize) < w && (vv as usize) < h {
                        for c in 0..3 {
                            out.set(vv as usize, uu as usize, c, color[c]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Renders markers and writes a PNG.
pub fn overlay(img: &Image, layers: &[(&LandmarkSet, [f32; 3])], path: &Path) -> Result<()> {
    save_image(&overlay_image(img, layers), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::fill(5, 7, 3, 0.0);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f32 / 255.0;
        }
        for name in ["a.png", "a.ppm"] {
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(back.channels(), 3, "{name}");
            for (x, y) in img.data().iter().zip(back.data()) {
                assert!((x - y).abs() <= 1.0 / 510.0, "{name}");
            }
        }
        let path = dir.path().join("a.pgm");
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap().channels(), 1);
    }

    #[test]
    fn unknown_format_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_image(&path), Err(Error::Format { .. })));
        let img = Image::fill(2, 2, 1, 0.5);
        assert!(matches!(
            save_image(&img, &dir.path().join("x.bmp")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn preprocess_identity_when_size_matches() {
        let img = Image::fill(8, 8, 1, 0.3);
        let lms = LandmarkSet::new(vec![[2.0, 3.0]]).unwrap();
        let sample = Sample::new(img.clone(), Some(lms.clone()), Domain::Source);
        let out = preprocess(&sample, 8, true).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.landmarks.unwrap(), lms);
    }

    #[test]
    fn preprocess_scales_landmarks_by_ratio() {
        let img = Image::fill(32, 16, 1, 0.3);
        let lms = LandmarkSet::new(vec![[16.0, 32.0], [8.0, 8.0]]).unwrap();
        let sample = Sample::new(img, Some(lms), Domain::Source);
        let out = preprocess(&sample, 8, true).unwrap();
        let pts = out.landmarks.unwrap();
        // Corner (W, H) → (S, S); interior scales linearly.
        assert_eq!(pts.point(0), [8.0, 8.0]);
        assert_eq!(pts.point(1), [4.0, 2.0]);
        assert_eq!(out.original_size, (32, 16));
    }

    #[test]
    fn overlay_marks_blocks_and_nothing_else() {
        let img = Image::fill(9, 9, 1, 0.5);
        let lms = LandmarkSet::new(vec![[4.0, 4.0]]).unwrap();
        let out = overlay_image(&img, &[(&lms, PRED_COLOR)]);
        for v in 0..9 {
            for u in 0..9 {
                let inside = (3..=5).contains(&v) && (3..=5).contains(&u);
                if inside {
                    assert_eq!(out.get(v, u, 0), PRED_COLOR[0]);
                } else {
                    assert_eq!(out.get(v, u, 0), 0.5);
                    assert_eq!(out.get(v, u, 1), 0.5);
                }
            }
        }
    }

    #[test]
    fn overlay_clips_at_corners() {
        let img = Image::fill(5, 5, 1, 0.0);
        let lms = LandmarkSet::new(vec![[0.0, 0.0], [4.0, 4.0], [-2.0, 7.0]]).unwrap();
        let out = overlay_image(&img, &[(&lms, GT_COLOR)]);
        assert_eq!(out.get(0, 0, 1), GT_COLOR[1]);
        assert_eq!(out.get(4, 4, 1), GT_COLOR[1]);
    }
}

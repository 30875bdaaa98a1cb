use crate::error::{Error, Result};
use crate::geometry::{BoundaryRay, Side};
use crate::optics::Absorption;
use crate::vec3::Vec3;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

/// Parallel-beam line integrals of σ over the unit disk.
///
/// Row `i` holds the view with normal (cos θᵢ, sin θᵢ), θᵢ = π i / views;
/// column `j` the offset sⱼ = −1 + (j + ½)·2/offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub views: usize,
    pub offsets: usize,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SinogramRow {
    angle_index: usize,
    offset_index: usize,
    angle_rad: f64,
    offset: f64,
    value: f64,
}

impl Sinogram {
    pub fn angle(&self, i: usize) -> f64 {
        PI * i as f64 / self.views as f64
    }

    pub fn offset(&self, j: usize) -> f64 {
        -1.0 + (j as f64 + 0.5) * 2.0 / self.offsets as f64
    }

    /// The incoming ray measuring sample (i, j).
    pub fn ray(&self, i: usize, j: usize) -> BoundaryRay {
        let theta = self.angle(i);
        let s = self.offset(j);
        let normal = Vec3::from_angle(theta);
        let dir = Vec3::from_angle(theta + PI / 2.0);
        let h = (1.0 - s * s).max(0.0).sqrt();
        BoundaryRay { x: (normal * s - dir * h).normalized(), v: dir, side: Side::Incoming }
    }

    /// Samples computed from a callback on the measuring rays.
    pub fn from_fn(views: usize, offsets: usize, f: impl Fn(&BoundaryRay) -> f64 + Sync) -> Sinogram {
        let mut s = Sinogram { views, offsets, values: vec![0.0; views * offsets] };
        let values: Vec<f64> = (0..views * offsets).into_par_iter().map(|k| f(&s.ray(k / offsets, k % offsets))).collect();
        s.values = values;
        s
    }

    /// Exact line integrals of a medium's absorption.
    pub fn of_medium(sigma: &(dyn Absorption + Sync), views: usize, offsets: usize) -> Sinogram {
        Sinogram::from_fn(views, offsets, |r| {
            let len = crate::geometry::exit_time(r.x, r.v);
            if len > 0.0 {
                sigma.depth(r.x, r.v, len)
            } else {
                0.0
            }
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.offsets + j]
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for i in 0..self.views {
            for j in 0..self.offsets {
                out.serialize(SinogramRow {
                    angle_index: i,
                    offset_index: j,
                    angle_rad: self.angle(i),
                    offset: self.offset(j),
                    value: self.get(i, j),
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a sinogram; every (angle, offset) cell must be present once.
    pub fn read_csv(r: impl BufRead) -> Result<Sinogram> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize::<SinogramRow>() {
            rows.push(row?);
        }
        let views = rows.iter().map(|r| r.angle_index + 1).max().unwrap_or(0);
        let offsets = rows.iter().map(|r| r.offset_index + 1).max().unwrap_or(0);
        if views == 0 || offsets == 0 {
            return Err(Error::IncompleteSinogram("no samples".into()));
        }
        let mut values = vec![f64::NAN; views * offsets];
        for r in &rows {
            let slot = &mut values[r.angle_index * offsets + r.offset_index];
            if !slot.is_nan() {
                return Err(Error::IncompleteSinogram(format!("duplicate cell ({}, {})", r.angle_index, r.offset_index)));
            }
            if !r.value.is_finite() {
                return Err(Error::IncompleteSinogram(format!("non-finite value at ({}, {})", r.angle_index, r.offset_index)));
            }
            *slot = r.value;
        }
        if let Some(k) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::IncompleteSinogram(format!("missing cell ({}, {})", k / offsets, k % offsets)));
        }
        Ok(Sinogram { views, offsets, values })
    }
}

/// Sidecar describing a raw image file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageHeader {
    pub size: usize,
    pub pixel_pitch: f64,
    pub disk_mask: bool,
}

/// Square image over [−1, 1]², row-major from the bottom-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FbpImage {
    pub header: ImageHeader,
    pub pixels: Vec<f64>,
}

impl FbpImage {
    pub fn center(&self, i: usize, j: usize) -> Vec3 {
        let h = self.header.pixel_pitch;
        Vec3::planar(-1.0 + (j as f64 + 0.5) * h, -1.0 + (i as f64 + 0.5) * h)
    }

    /// Relative L² distance to a reference function over the disk.
    pub fn relative_error(&self, truth: impl Fn(Vec3) -> f64) -> f64 {
        let n = self.header.size;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let x = self.center(i, j);
                if x.norm() < 1.0 {
                    let t = truth(x);
                    num += (self.pixels[i * n + j] - t).powi(2);
                    den += t * t;
                }
            }
        }
        (num / den).sqrt()
    }

    /// Bilinear interpolation, zero outside the grid.
    pub fn sample(&self, x: Vec3) -> f64 {
        let n = self.header.size;
        let h = self.header.pixel_pitch;
        let fx = (x.x + 1.0) / h - 0.5;
        let fy = (x.y + 1.0) / h - 0.5;
        let (j0, i0) = (fx.floor(), fy.floor());
        let (a, b) = (fx - j0, fy - i0);
        let at = |i: f64, j: f64| {
            if i < 0.0 || j < 0.0 || i >= n as f64 || j >= n as f64 {
                0.0
            } else {
                self.pixels[i as usize * n + j as usize]
            }
        };
        (1.0 - a) * (1.0 - b) * at(i0, j0) + a * (1.0 - b) * at(i0, j0 + 1.0) + (1.0 - a) * b * at(i0 + 1.0, j0) + a * b * at(i0 + 1.0, j0 + 1.0)
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.pixels.len() * 8);
        for p in &self.pixels {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        std::fs::write(stem.with_extension("bin"), bytes)?;
        let json = serde_json::to_string_pretty(&self.header)?;
        std::fs::write(stem.with_extension("json"), json)?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<FbpImage> {
        let header: ImageHeader = serde_json::from_slice(&std::fs::read(stem.with_extension("json"))?)?;
        let bytes = std::fs::read(stem.with_extension("bin"))?;
        if bytes.len() != header.size * header.size * 8 {
            return Err(Error::InvalidInput("image size does not match its header".into()));
        }
        let pixels = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(FbpImage { header, pixels })
    }
}

/// Filtered backprojection with a Ram-Lak filter apodized by a cosine
/// window, onto a `size × size` grid masked to the unit disk.
pub fn fbp_invert(sino: &Sinogram, size: usize) -> Result<FbpImage> {
    if sino.views == 0 || sino.offsets < 2 || sino.values.len() != sino.views * sino.offsets {
        return Err(Error::IncompleteSinogram(format!("{} values for {}×{}", sino.values.len(), sino.views, sino.offsets)));
    }
    if sino.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::IncompleteSinogram("non-finite value".into()));
    }
    let ns = sino.offsets;
    let ds = 2.0 / ns as f64;
    let len = (2 * ns).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);

    // spatial Ram-Lak kernel, transformed once
    let mut kernel: Vec<Complex<f64>> = (0..len)
        .map(|k| {
            let m = if k <= len / 2 { k as i64 } else { k as i64 - len as i64 };
            let h = if m == 0 {
                1.0 / (4.0 * ds * ds)
            } else if m % 2 != 0 {
                -1.0 / ((m * m) as f64 * PI * PI * ds * ds)
            } else {
                0.0
            };
            Complex::new(h, 0.0)
        })
        .collect();
    fwd.process(&mut kernel);
    for (k, c) in kernel.iter_mut().enumerate() {
        let m = if k <= len / 2 { k } else { len - k };
        *c *= (PI * m as f64 / len as f64).cos();
    }

    let filtered: Vec<Vec<f64>> = (0..sino.views)
        .into_par_iter()
        .map(|i| {
            let mut buf: Vec<Complex<f64>> = (0..len).map(|j| Complex::new(if j < ns { sino.get(i, j) } else { 0.0 }, 0.0)).collect();
            let mut planner = FftPlanner::<f64>::new();
            planner.plan_fft_forward(len).process(&mut buf);
            for (b, k) in buf.iter_mut().zip(&kernel) {
                *b *= k;
            }
            planner.plan_fft_inverse(len).process(&mut buf);
            buf[..ns].iter().map(|c| c.re * ds / len as f64).collect()
        })
        .collect();

    let pitch = 2.0 / size as f64;
    let dtheta = PI / sino.views as f64;
    let normals: Vec<Vec3> = (0..sino.views).map(|i| Vec3::from_angle(sino.angle(i))).collect();
    let pixels: Vec<f64> = (0..size * size)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / size, k % size);
            let x = Vec3::planar(-1.0 + (j as f64 + 0.5) * pitch, -1.0 + (i as f64 + 0.5) * pitch);
            if x.norm() >= 1.0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for (q, n) in filtered.iter().zip(&normals) {
                let f = (x.dot(*n) + 1.0) / ds - 0.5;
                let j0 = f.floor();
                let a = f - j0;
                let at = |j: f64| if j < 0.0 || j >= ns as f64 { 0.0 } else { q[j as usize] };
                acc += (1.0 - a) * at(j0) + a * at(j0 + 1.0);
            }
            acc * dtheta
        })
        .collect();
    Ok(FbpImage { header: ImageHeader { size, pixel_pitch: pitch, disk_mask: true }, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::attenuation_e;
    use crate::optics::{AbsorptionModel, MediumSpec, ScatteringModel};

    fn gaussian() -> crate::optics::OpticalMedium {
        MediumSpec::new(
            2,
            AbsorptionModel::GaussianBump { background: 0.0, amplitude: 1.0, center: vec![0.15, -0.1], width: 0.25 },
            ScatteringModel::None,
        )
        .build()
        .unwrap()
    }

    #[test]
    fn zero_sinogram_gives_zero_image() {
        let s = Sinogram { views: 8, offsets: 16, values: vec![0.0; 128] };
        assert!(fbp_invert(&s, 32).unwrap().pixels.iter().all(|&p| p == 0.0));
        let bad = Sinogram { views: 8, offsets: 16, values: vec![0.0; 100] };
        assert!(matches!(fbp_invert(&bad, 32), Err(Error::IncompleteSinogram(_))));
    }

    #[test]
    fn disk_phantom() {
        let r = 0.5;
        let s = Sinogram::from_fn(180, 128, |ray| {
            let p = ray.x.dot(Vec3::from_angle(ray.v.y.atan2(ray.v.x) - PI / 2.0));
            2.0 * (r * r - p * p).max(0.0).sqrt()
        });
        let img = fbp_invert(&s, 128).unwrap();
        let err = img.relative_error(|x| if x.norm() <= r { 1.0 } else { 0.0 });
        assert!(err < 0.2, "{err}");
        // away from the edge the reconstruction is accurate
        assert!((img.sample(Vec3::planar(0.1, 0.05)) - 1.0).abs() < 0.03);
    }

    #[test]
    fn gaussian_phantom_and_consistency() {
        let m = gaussian();
        // oracle sinogram through the adaptive attenuation
        let s = Sinogram::from_fn(180, 128, |ray| {
            let exit = ray.transported();
            -attenuation_e(&m, exit.x, ray.x).unwrap().ln()
        });
        let fast = Sinogram::of_medium(&m, 180, 128);
        for (a, b) in s.values.iter().zip(&fast.values) {
            assert!((a - b).abs() < 1e-8);
        }
        let img = fbp_invert(&s, 128).unwrap();
        let err = img.relative_error(|x| m.sigma(x, Vec3::E1));
        assert!(err <= 0.05, "{err}");
        // forward projection of the reconstruction
        let reproj = Sinogram::from_fn(180, 128, |ray| {
            let len = crate::geometry::exit_time(ray.x, ray.v);
            let n = 200;
            (0..n).map(|k| img.sample(ray.x + ray.v * (len * (k as f64 + 0.5) / n as f64))).sum::<f64>() * len / n as f64
        });
        let num: f64 = reproj.values.iter().zip(&s.values).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = s.values.iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() < 0.07);
    }

    #[test]
    fn csv_and_image_round_trip() {
        let s = Sinogram::of_medium(&gaussian(), 6, 10);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(Sinogram::read_csv(&buf[..]).unwrap(), s);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("angle_index,offset_index,angle_rad,offset,value"));
        let truncated: String = text.lines().take(30).collect::<Vec<_>>().join("\n");
        assert!(matches!(Sinogram::read_csv(truncated.as_bytes()), Err(Error::IncompleteSinogram(_))));
        let img = fbp_invert(&s, 16).unwrap();
        let dir = std::env::temp_dir().join(format!("itrans-img-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        img.write(&dir.join("img")).unwrap();
        assert_eq!(FbpImage::read(&dir.join("img")).unwrap(), img);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

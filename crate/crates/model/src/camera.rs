//! Pinhole camera model and back-projection of 2D features into a voxel grid.

use skimba_tensor::{Scalar, Tensor};

use crate::error::{ModelError, Result};

/// Pinhole intrinsics plus a rigid grid-to-camera transform.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Image extents in pixels (columns, rows).
    pub width: usize,
    pub height: usize,
    /// p_cam = rotation * p_world + translation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(ModelError::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ModelError::Config("image extents must be positive".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// Project a world point to pixel-center coordinates (u along width,
    /// v along height); None when at or behind the camera plane.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let cam = self.to_camera(p);
        if cam[2] <= 1e-9 {
            return None;
        }
        Some((self.fx * cam[0] / cam[2] + self.cx, self.fy * cam[1] / cam[2] + self.cy))
    }

    /// Camera-to-world ray direction through a pixel center (unnormalized).
    pub fn pixel_ray(&self, u: f64, v: f64) -> ([f64; 3], [f64; 3]) {
        // invert the rigid transform: p_world = R^T (p_cam - t)
        let r = &self.rotation;
        let t = &self.translation;
        let origin = [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ];
        let dir_cam = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let dir = [
            r[0][0] * dir_cam[0] + r[1][0] * dir_cam[1] + r[2][0] * dir_cam[2],
            r[0][1] * dir_cam[0] + r[1][1] * dir_cam[1] + r[2][1] * dir_cam[2],
            r[0][2] * dir_cam[0] + r[1][2] * dir_cam[1] + r[2][2] * dir_cam[2],
        ];
        (origin, dir)
    }
}

/// Voxel-grid geometry for projection.
#[derive(Debug, Clone, Copy)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

impl GridGeometry {
    pub fn voxel_center(&self, l: usize, w: usize, h: usize) -> [f64; 3] {
        [
            (l as f64 + 0.5) * self.voxel_size,
            (w as f64 + 0.5) * self.voxel_size,
            (h as f64 + 0.5) * self.voxel_size,
        ]
    }
}

/// Back-project (C, H_img, W_img) image features along optical rays into a
/// (C, L, W, H) volume: each voxel center is projected through the pinhole
/// model and bilinearly samples the feature map; voxels behind the camera or
/// out of view receive zeros. Linear in the features, so the backward pass
/// scatters the same bilinear weights.
pub fn project_2d_to_3d<E: Scalar>(
    features: &Tensor<E>,
    cam: &CameraModel,
    grid: &GridGeometry,
) -> Result<Tensor<E>> {
    cam.validate()?;
    if features.rank() != 3 || features.shape()[1] != cam.height || features.shape()[2] != cam.width {
        return Err(ModelError::Geometry(format!(
            "feature map {:?} does not match image extents {}x{}",
            features.shape(),
            cam.height,
            cam.width
        )));
    }
    let channels = features.shape()[0];
    let (h_img, w_img) = (cam.height, cam.width);
    let [l, w, h] = grid.dims;
    let spatial = l * w * h;

    // bilinear sample taps per voxel: (row0, col0, frac_v, frac_u)
    let mut taps: Vec<Option<(usize, usize, f64, f64)>> = Vec::with_capacity(spatial);
    for li in 0..l {
        for wi in 0..w {
            for hi in 0..h {
                let tap = cam.project(grid.voxel_center(li, wi, hi)).and_then(|(u, v)| {
                    if u < 0.0 || v < 0.0 || u > (w_img - 1) as f64 || v > (h_img - 1) as f64 {
                        return None;
                    }
                    let col0 = (u.floor() as usize).min(w_img - 1);
                    let row0 = (v.floor() as usize).min(h_img - 1);
                    Some((row0, col0, v - row0 as f64, u - col0 as f64))
                });
                taps.push(tap);
            }
        }
    }

    let fd = features.data();
    let mut out = vec![E::ZERO; channels * spatial];
    for (vox, tap) in taps.iter().enumerate() {
        let Some((r0, c0, fv, fu)) = *tap else { continue };
        let r1 = (r0 + 1).min(h_img - 1);
        let c1 = (c0 + 1).min(w_img - 1);
        let (w00, w01, w10, w11) = bilinear_weights::<E>(fv, fu);
        for ch in 0..channels {
            let base = ch * h_img * w_img;
            out[ch * spatial + vox] = fd[base + r0 * w_img + c0] * w00
                + fd[base + r0 * w_img + c1] * w01
                + fd[base + r1 * w_img + c0] * w10
                + fd[base + r1 * w_img + c1] * w11;
        }
    }

    let feat_len = features.len();
    Ok(Tensor::from_op(
        vec![channels, l, w, h],
        out,
        vec![features.clone()],
        Box::new(move |gy: &[E]| {
            let mut gf = vec![E::ZERO; feat_len];
            for (vox, tap) in taps.iter().enumerate() {
                let Some((r0, c0, fv, fu)) = *tap else { continue };
                let r1 = (r0 + 1).min(h_img - 1);
                let c1 = (c0 + 1).min(w_img - 1);
                let (w00, w01, w10, w11) = bilinear_weights::<E>(fv, fu);
                for ch in 0..channels {
                    let g = gy[ch * spatial + vox];
                    let base = ch * h_img * w_img;
                    gf[base + r0 * w_img + c0] += g * w00;
                    gf[base + r0 * w_img + c1] += g * w01;
                    gf[base + r1 * w_img + c0] += g * w10;
                    gf[base + r1 * w_img + c1] += g * w11;
                }
            }
            vec![Some(gf)]
        }),
    ))
}

fn bilinear_weights<E: Scalar>(fv: f64, fu: f64) -> (E, E, E, E) {
    (
        E::from_f64((1.0 - fv) * (1.0 - fu)),
        E::from_f64((1.0 - fv) * fu),
        E::from_f64(fv * (1.0 - fu)),
        E::from_f64(fv * fu),
    )
}

/// Identity-rotation camera placed at `eye`, looking along +z of the world.
pub fn axis_aligned_camera(eye: [f64; 3], fx: f64, fy: f64, width: usize, height: usize) -> CameraModel {
    CameraModel {
        fx,
        fy,
        cx: (width - 1) as f64 / 2.0,
        cy: (height - 1) as f64 / 2.0,
        width,
        height,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [-eye[0], -eye[1], -eye[2]],
    }
}

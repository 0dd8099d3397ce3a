use super::params::{Geometry, OperatingParams, DAM_DOMAIN_M, DAM_OBSTACLE_X_M};
use super::FlowError;

/// Fluid mask on an `h x w` cell grid: 1 = fluid, 0 = solid. Row 0 is the bottom.
pub fn build_geometry_mask(params: &OperatingParams, resolution: (usize, usize)) -> Result<Vec<u8>, FlowError> {
    let (h, w) = resolution;
    if h == 0 || w == 0 {
        return Err(FlowError::Config(format!("empty grid {h}x{w}")));
    }
    let (hm, wm) = params.extents_m();
    let (dx, dy) = (wm / w as f64, hm / h as f64);
    let mut mask = vec![1u8; h * w];
    let mut carve = |solid: &dyn Fn(f64, f64) -> bool| {
        for j in 0..h {
            for i in 0..w {
                if solid((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy) {
                    mask[j * w + i] = 0;
                }
            }
        }
    };
    match params.geometry {
        Geometry::Cavity { .. } | Geometry::Tube { .. } => {}
        Geometry::Cylinder { d, x1, x2, y1, y2 } => {
            let r = 0.5 * d;
            if r >= x1.min(x2).min(y1).min(y2) {
                return Err(FlowError::Geometry(format!(
                    "cylinder of diameter {d} m does not fit {x1}/{x2}/{y1}/{y2} m from the walls"
                )));
            }
            // Centre sits x1 from the left wall and y2 from the bottom wall.
            carve(&|x, y| (x - x1).powi(2) + (y - y2).powi(2) <= r * r);
        }
        Geometry::Dam { h: dh, w: dw } => {
            if DAM_OBSTACLE_X_M + dw >= DAM_DOMAIN_M.0 || dh >= DAM_DOMAIN_M.1 {
                return Err(FlowError::Geometry(format!("dam obstacle {dh} x {dw} m exceeds the domain")));
            }
            carve(&|x, y| x >= DAM_OBSTACLE_X_M && x <= DAM_OBSTACLE_X_M + dw && y <= dh);
        }
    }
    Ok(mask)
}

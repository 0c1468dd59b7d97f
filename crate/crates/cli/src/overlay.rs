//! Wireframe overlays: model edge polylines projected at estimated poses.

use clusterpose::multi::InstanceEstimate;
use clusterpose::{project, CameraIntrinsics, IndexMask, PartModel};
use image::{Rgb, RgbImage};
use imageproc::drawing::draw_line_segment_mut;

const ACCEPTED: Rgb<u8> = Rgb([40, 220, 60]);
const REJECTED: Rgb<u8> = Rgb([230, 50, 40]);

/// Gray-level rendering of an index mask, used when a scene has no image.
pub fn mask_backdrop(mask: &IndexMask) -> RgbImage {
    RgbImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        match mask.get(x as usize, y as usize) {
            0 => Rgb([0, 0, 0]),
            id => {
                let g = 70 + (id as u32 * 37 % 120) as u8;
                Rgb([g, g, g])
            }
        }
    })
}

pub fn draw_estimates(
    canvas: &mut RgbImage,
    estimates: &[InstanceEstimate],
    models: &[PartModel],
    camera: &CameraIntrinsics,
) {
    for est in estimates {
        let (Some(pose), Some(model)) = (est.pose(), models.get(est.model)) else { continue };
        let color = if est.accepted { ACCEPTED } else { REJECTED };
        let verts = model.mesh.vertices();
        for edge in &model.edges {
            for w in edge.vertices.windows(2) {
                let a = project(camera, pose, &verts[w[0] as usize]);
                let b = project(camera, pose, &verts[w[1] as usize]);
                if let (Some(a), Some(b)) = (a, b) {
                    draw_line_segment_mut(canvas, (a.x as f32, a.y as f32), (b.x as f32, b.y as f32), color);
                }
            }
        }
    }
}

//! Static SVG rendering of ground-plane footprints.
//!
//! Boxes are drawn as `<polygon>` elements with two stroke classes: `gt` for
//! annotations (solid green) and `det` for detections (dashed red); the grid
//! outline is a `<rect class="grid">`. Output bytes are deterministic for
//! fixed input (fixed-precision coordinates, fixed element order).

use std::fmt::Write;
use voxeldet::geometry::{bev_polygon, Box3D};
use voxeldet::voxel::VoxelGridSpec;

/// World-bounds rectangle of the drawing: grid limits when known, otherwise
/// the padded bound of the boxes.
pub fn drawing_bounds(grid: Option<&VoxelGridSpec>, boxes: &[&Box3D]) -> [f64; 4] {
    if let Some(g) = grid {
        return [g.x_min, g.y_min, g.x_max - g.x_min, g.y_max - g.y_min];
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for b in boxes {
        for v in bev_polygon(b).vertices() {
            lo[0] = lo[0].min(v[0]);
            lo[1] = lo[1].min(v[1]);
            hi[0] = hi[0].max(v[0]);
            hi[1] = hi[1].max(v[1]);
        }
    }
    if !lo[0].is_finite() {
        return [-1.0, -1.0, 2.0, 2.0];
    }
    let pad = 0.05 * (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
    [
        lo[0] - pad,
        lo[1] - pad,
        hi[0] - lo[0] + 2.0 * pad,
        hi[1] - lo[1] + 2.0 * pad,
    ]
}

pub fn render_bev_svg(
    grid: Option<&VoxelGridSpec>,
    gt_boxes: &[Box3D],
    det_boxes: &[Box3D],
) -> String {
    let all: Vec<&Box3D> = gt_boxes.iter().chain(det_boxes.iter()).collect();
    let [bx, by, bw, bh] = drawing_bounds(grid, &all);
    // World y points up; SVG y points down. Mirror y around the bounds.
    let flip = |y: f64| (by + bh) - (y - by);
    let stroke = 0.004 * bw.max(bh);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{bx:.4} {by:.4} {bw:.4} {bh:.4}">"#
    );
    let _ = writeln!(
        svg,
        "<style>.grid{{fill:#ffffff;stroke:#888888;stroke-width:{stroke:.4}}}\
         .gt{{fill:none;stroke:#2a7d2a;stroke-width:{stroke:.4}}}\
         .det{{fill:none;stroke:#c03030;stroke-width:{stroke:.4};stroke-dasharray:{dash:.4}}}</style>",
        stroke = stroke,
        dash = 3.0 * stroke,
    );
    let _ = writeln!(
        svg,
        r#"<rect class="grid" x="{bx:.4}" y="{by:.4}" width="{bw:.4}" height="{bh:.4}"/>"#
    );
    let mut polygon = |b: &Box3D, class: &str| {
        let points: Vec<String> = bev_polygon(b)
            .vertices()
            .iter()
            .map(|v| format!("{:.4},{:.4}", v[0], flip(v[1])))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon class="{class}" points="{}"/>"#,
            points.join(" ")
        );
    };
    for b in gt_boxes {
        polygon(b, "gt");
    }
    for b in det_boxes {
        polygon(b, "det");
    }
    svg.push_str("</svg>\n");
    svg
}

//! Layer-by-zone delta heatmap rendered as deterministic SVG.
//!
//! Each cell shows `score - baseline` on a diverging colormap: exact white
//! at zero, a blue ramp for degradation, a red ramp for improvement. The
//! scale is symmetric around zero.

use thiserror::Error;

use crate::harness::{Metric, ResultsTable};
use crate::model::Zone;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("empty results table")]
    EmptyTable,
    #[error("baseline {0} outside [0, 100]")]
    BadBaseline(f64),
    #[error("scale bound {0} must be positive")]
    BadScaleBound(f64),
}

/// What to render: a table, the unmasked baseline score, and styling knobs.
#[derive(Debug, Clone)]
pub struct HeatmapSpec {
    pub table: ResultsTable,
    pub baseline: f64,
    /// Symmetric color-scale bound; `None` picks `max(|delta|)` with a
    /// floor of 1.0.
    pub scale_bound: Option<f64>,
    /// Write the delta value inside each cell.
    pub annotate: bool,
    /// Swap axes (layers as rows instead of columns).
    pub transpose: bool,
}

impl HeatmapSpec {
    pub fn new(table: ResultsTable, baseline: f64) -> Self {
        Self {
            table,
            baseline,
            scale_bound: None,
            annotate: true,
            transpose: false,
        }
    }
}

/// Per-cell `score - baseline`, in table order.
pub fn compute_deltas(table: &ResultsTable, baseline: f64) -> Vec<[f64; 5]> {
    table
        .rows
        .iter()
        .map(|row| {
            let mut out = [0.0; 5];
            for (j, v) in row.iter().enumerate() {
                out[j] = v - baseline;
            }
            out
        })
        .collect()
}

/// Ramp endpoints (sRGB). White sits exactly at delta zero.
const WHITE: (u8, u8, u8) = (255, 255, 255);
const BLUE_END: (u8, u8, u8) = (8, 48, 107);
const RED_END: (u8, u8, u8) = (103, 0, 13);

fn lerp_channel(from: u8, to: u8, t: f64) -> u8 {
    (from as f64 + (to as f64 - from as f64) * t).round() as u8
}

/// Piecewise-linear diverging color for a delta under a symmetric bound.
pub fn cell_color(delta: f64, bound: f64) -> (u8, u8, u8) {
    if delta == 0.0 {
        return WHITE;
    }
    let t = (delta.abs() / bound).min(1.0);
    let end = if delta < 0.0 { BLUE_END } else { RED_END };
    (
        lerp_channel(WHITE.0, end.0, t),
        lerp_channel(WHITE.1, end.1, t),
        lerp_channel(WHITE.2, end.2, t),
    )
}

fn hex(color: (u8, u8, u8)) -> String {
    format!("#{:02X}{:02X}{:02X}", color.0, color.1, color.2)
}

fn luminance(color: (u8, u8, u8)) -> f64 {
    0.299 * color.0 as f64 + 0.587 * color.1 as f64 + 0.114 * color.2 as f64
}

const ZONE_ROWS: [(Zone, &str); 5] = [
    (Zone::All, "All"),
    (Zone::Q2, "Q2"),
    (Zone::Q2P, "Q2P"),
    (Zone::P2Q, "P2Q"),
    (Zone::P2, "P2"),
];

const CELL: f64 = 48.0;
const MARGIN_LEFT: f64 = 74.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 54.0;
const COLORBAR_GAP: f64 = 26.0;
const COLORBAR_WIDTH: f64 = 16.0;
const MARGIN_RIGHT: f64 = 110.0;

/// Render the heatmap to an SVG document. Pure: the same spec yields
/// byte-identical output.
pub fn render_heatmap(spec: &HeatmapSpec) -> Result<String, VizError> {
    if spec.table.rows.is_empty() {
        return Err(VizError::EmptyTable);
    }
    if !(0.0..=100.0).contains(&spec.baseline) {
        return Err(VizError::BadBaseline(spec.baseline));
    }
    if let Some(b) = spec.scale_bound {
        if !(b > 0.0) {
            return Err(VizError::BadScaleBound(b));
        }
    }

    let deltas = compute_deltas(&spec.table, spec.baseline);
    let max_abs = deltas
        .iter()
        .flatten()
        .fold(0.0f64, |acc, d| acc.max(d.abs()));
    let bound = spec.scale_bound.unwrap_or_else(|| max_abs.max(1.0));

    let layers = spec.table.num_layers();
    let (cols, rows) = if spec.transpose {
        (ZONE_ROWS.len(), layers)
    } else {
        (layers, ZONE_ROWS.len())
    };
    let grid_w = cols as f64 * CELL;
    let grid_h = rows as f64 * CELL;
    let width = MARGIN_LEFT + grid_w + COLORBAR_GAP + COLORBAR_WIDTH + MARGIN_RIGHT - COLORBAR_GAP;
    let height = MARGIN_TOP + grid_h + MARGIN_BOTTOM;

    let metric_name = match spec.table.metric {
        Metric::Em => "EM",
        Metric::F1 => "F1",
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"Helvetica, Arial, sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#FFFFFF\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{} change vs baseline {:.3}</text>\n",
        MARGIN_LEFT + grid_w / 2.0,
        metric_name,
        spec.baseline
    ));

    // cells
    for (zi, (zone, _)) in ZONE_ROWS.iter().enumerate() {
        for layer in 0..layers {
            let (col, row) = if spec.transpose { (zi, layer) } else { (layer, zi) };
            let x = MARGIN_LEFT + col as f64 * CELL;
            let y = MARGIN_TOP + row as f64 * CELL;
            let delta = deltas[layer][zi];
            let color = cell_color(delta, bound);
            svg.push_str(&format!(
                "  <rect id=\"cell-{}-{}\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" fill=\"{}\" stroke=\"#CCCCCC\" stroke-width=\"1\"/>\n",
                zone.label(),
                layer + 1,
                hex(color)
            ));
            if spec.annotate {
                let text_fill = if luminance(color) < 140.0 { "#FFFFFF" } else { "#1A1A1A" };
                svg.push_str(&format!(
                    "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\" fill=\"{}\">{:+.3}</text>\n",
                    x + CELL / 2.0,
                    y + CELL / 2.0 + 3.5,
                    text_fill,
                    delta
                ));
            }
        }
    }

    // axis labels
    for (zi, (_, zone_label)) in ZONE_ROWS.iter().enumerate() {
        if spec.transpose {
            let x = MARGIN_LEFT + (zi as f64 + 0.5) * CELL;
            svg.push_str(&format!(
                "  <text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{zone_label}</text>\n",
                MARGIN_TOP + grid_h + 18.0
            ));
        } else {
            let y = MARGIN_TOP + (zi as f64 + 0.5) * CELL + 4.0;
            svg.push_str(&format!(
                "  <text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"12\" text-anchor=\"end\">{zone_label}</text>\n",
                MARGIN_LEFT - 10.0
            ));
        }
    }
    for layer in 0..layers {
        let label = layer + 1;
        if spec.transpose {
            let y = MARGIN_TOP + (layer as f64 + 0.5) * CELL + 4.0;
            svg.push_str(&format!(
                "  <text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"12\" text-anchor=\"end\">{label}</text>\n",
                MARGIN_LEFT - 10.0
            ));
        } else {
            let x = MARGIN_LEFT + (layer as f64 + 0.5) * CELL;
            svg.push_str(&format!(
                "  <text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{label}</text>\n",
                MARGIN_TOP + grid_h + 18.0
            ));
        }
    }
    let axis_label = if spec.transpose { "zone" } else { "layer" };
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{axis_label}</text>\n",
        MARGIN_LEFT + grid_w / 2.0,
        MARGIN_TOP + grid_h + 38.0
    ));

    // colorbar: 101 strips from +bound at the top to -bound at the bottom
    let bar_x = MARGIN_LEFT + grid_w + COLORBAR_GAP;
    let strips = 101;
    let strip_h = grid_h / strips as f64;
    for s in 0..strips {
        let frac = 1.0 - 2.0 * s as f64 / (strips - 1) as f64; // +1 .. -1
        let color = cell_color(frac * bound, bound);
        svg.push_str(&format!(
            "  <rect x=\"{bar_x:.1}\" y=\"{:.2}\" width=\"{COLORBAR_WIDTH:.1}\" height=\"{:.2}\" fill=\"{}\"/>\n",
            MARGIN_TOP + s as f64 * strip_h,
            strip_h + 0.5,
            hex(color)
        ));
    }
    for (frac, label_val) in [(0.0f64, bound), (0.5, 0.0), (1.0, -bound)] {
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\">{label_val:+.3}</text>\n",
            bar_x + COLORBAR_WIDTH + 6.0,
            MARGIN_TOP + frac * grid_h + 3.5
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

use std::collections::BTreeMap;

use super::canvas::{colormap, luma, Canvas, Color, BLACK, BLUE, GRID, ORANGE, PALETTE, WHITE};
use crate::embeddings::ProjectedPoint;
use crate::error::{Error, Result};
use crate::evaluation::{AucMatrix, DilationCurve, Subgroup};
use crate::mask_ops::MaskingStrategy;

const CELL: i64 = 96;

/// Cell range used when none is given: the matrix's own min and max mean.
pub fn matrix_range(matrix: &AucMatrix) -> (f64, f64) {
    let means = matrix.cells.iter().flatten().map(|c| c.mean);
    let (lo, hi) = means.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-9 {
        (lo - 0.05, hi + 0.05)
    } else {
        (lo, hi)
    }
}

fn check_matrix(matrix: &AucMatrix) -> Result<()> {
    let n = matrix.strategies.len();
    let mut missing = Vec::new();
    if n == 0 {
        missing.push(format!("{}: no strategies", matrix.class_name));
    }
    if matrix.cells.len() != n || matrix.cells.iter().any(|r| r.len() != n) {
        missing.push(format!("{}: cell grid is not {n}x{n}", matrix.class_name));
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteRun(missing));
    }
    if matrix.cells.iter().flatten().any(|c| !c.mean.is_finite() || !c.std.is_finite()) {
        return Err(Error::InvalidArgument(format!("{}: non-finite matrix cell", matrix.class_name)));
    }
    Ok(())
}

/// Annotated heatmap, rows = training strategy, columns = evaluation strategy.
/// `range` defaults to the matrix's own extent.
pub fn render_heatmap(matrix: &AucMatrix, range: Option<(f64, f64)>) -> Result<Vec<u8>> {
    check_matrix(matrix)?;
    let (lo, hi) = range.unwrap_or_else(|| matrix_range(matrix));
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("empty color range {lo}..{hi}")));
    }
    let n = matrix.strategies.len() as i64;
    let (left, top) = (120, 56);
    let mut c = Canvas::new((left + n * CELL + 16) as u32, (top + n * CELL + 40) as u32);
    c.text_centered(left + n * CELL / 2, 8, &format!("{} AUC", matrix.class_name), BLACK);
    c.text_centered(left + n * CELL / 2, 24, "evaluated on", BLACK);
    for (j, s) in matrix.strategies.iter().enumerate() {
        c.text_centered(left + j as i64 * CELL + CELL / 2, top - 16, s.as_str(), BLACK);
    }
    for (i, s) in matrix.strategies.iter().enumerate() {
        let y = top + i as i64 * CELL;
        c.text(8, y + CELL / 2 - 4, s.as_str(), BLACK);
        for (j, cell) in matrix.cells[i].iter().enumerate() {
            let x = left + j as i64 * CELL;
            let color = colormap((cell.mean - lo) / (hi - lo));
            c.fill_rect(x, y, CELL, CELL, color);
            c.stroke_rect(x, y, CELL, CELL, WHITE);
            let ink = if luma(color) > 140.0 { BLACK } else { WHITE };
            c.text_centered(x + CELL / 2, y + CELL / 2 - 10, &format!("{:.2}", cell.mean), ink);
            c.text_centered(x + CELL / 2, y + CELL / 2 + 4, &format!("±{:.2}", cell.std), ink);
        }
    }
    c.text(8, top + n * CELL + 16, &format!("rows: trained on; color range {lo:.2}-{hi:.2}"), BLACK);
    c.into_png()
}

struct Plot {
    left: i64,
    top: i64,
    width: i64,
    height: i64,
    x_max: f64,
}

impl Plot {
    fn px(&self, x: f64) -> i64 {
        self.left + (x / self.x_max * self.width as f64).round() as i64
    }

    fn py(&self, y: f64) -> i64 {
        self.top + ((1.0 - y.clamp(0.0, 1.0)) * self.height as f64).round() as i64
    }
}

fn curve_color(curve: &DilationCurve, index: usize) -> Color {
    match curve.subgroup {
        Subgroup::NegativesOnly => BLUE,
        Subgroup::PositivesOnly => ORANGE,
        Subgroup::All => PALETTE[index % PALETTE.len()],
    }
}

/// Mean AUC lines with ±std bands against dilation factor; negatives-only
/// curves are blue and positives-only orange.
pub fn render_curves(curves: &[DilationCurve]) -> Result<Vec<u8>> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no curves to render".into()));
    }
    for cv in curves {
        if cv.factors.is_empty() {
            return Err(Error::InvalidArgument("empty curve".into()));
        }
        if cv.auc_mean.len() != cv.factors.len() || cv.auc_std.len() != cv.factors.len() {
            return Err(Error::shape(
                format!("{} points", cv.factors.len()),
                format!("{} means, {} stds", cv.auc_mean.len(), cv.auc_std.len()),
            ));
        }
        if cv.auc_mean.iter().chain(&cv.auc_std).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite curve value".into()));
        }
        if cv.factors.windows(2).any(|w| w[1] <= w[0]) || cv.factors[0] < 0 {
            return Err(Error::InvalidArgument("dilation factors must be increasing and non-negative".into()));
        }
    }
    let x_max = curves.iter().map(|c| *c.factors.last().expect("non-empty")).max().unwrap_or(1).max(1) as f64;
    let plot = Plot {
        left: 56,
        top: 32,
        width: 560,
        height: 300,
        x_max,
    };
    let legend_h = 16 * curves.len() as i64;
    let mut c = Canvas::new(
        (plot.left + plot.width + 24) as u32,
        (plot.top + plot.height + 48 + legend_h) as u32,
    );
    let title = format!("{} AUC vs dilation", curves[0].class_name);
    c.text_centered(plot.left + plot.width / 2, 8, &title, BLACK);
    for k in 0..=4 {
        let y = k as f64 / 4.0;
        let py = plot.py(y);
        c.line(plot.left, py, plot.left + plot.width, py, GRID, 1);
        c.text(8, py - 4, &format!("{y:.2}"), BLACK);
    }
    c.line(plot.left, plot.top, plot.left, plot.top + plot.height, BLACK, 1);
    c.line(plot.left, plot.top + plot.height, plot.left + plot.width, plot.top + plot.height, BLACK, 1);

    let mut last_label = i64::MIN / 2;
    let mut ticks: Vec<i64> = curves.iter().flat_map(|c| c.factors.iter().copied()).collect();
    ticks.sort_unstable();
    ticks.dedup();
    for f in ticks {
        let px = plot.px(f as f64);
        c.line(px, plot.top + plot.height, px, plot.top + plot.height + 3, BLACK, 1);
        let label = f.to_string();
        if px - last_label >= 8 * (label.len() as i64 + 1) {
            c.text_centered(px, plot.top + plot.height + 8, &label, BLACK);
            last_label = px;
        }
    }

    for (idx, cv) in curves.iter().enumerate() {
        let color = curve_color(cv, idx);
        // band: interpolate mean ± std per pixel column
        for seg in 0..cv.factors.len().saturating_sub(1) {
            let (x0, x1) = (plot.px(cv.factors[seg] as f64), plot.px(cv.factors[seg + 1] as f64));
            for px in x0..=x1 {
                let t = if x1 > x0 { (px - x0) as f64 / (x1 - x0) as f64 } else { 0.0 };
                let m = cv.auc_mean[seg] * (1.0 - t) + cv.auc_mean[seg + 1] * t;
                let s = cv.auc_std[seg] * (1.0 - t) + cv.auc_std[seg + 1] * t;
                for py in plot.py(m + s)..=plot.py(m - s) {
                    c.blend(px, py, color, 0.2);
                }
            }
        }
        for seg in 0..cv.factors.len().saturating_sub(1) {
            c.line(
                plot.px(cv.factors[seg] as f64),
                plot.py(cv.auc_mean[seg]),
                plot.px(cv.factors[seg + 1] as f64),
                plot.py(cv.auc_mean[seg + 1]),
                color,
                2,
            );
        }
        for (f, m) in cv.factors.iter().zip(&cv.auc_mean) {
            c.fill_rect(plot.px(*f as f64) - 2, plot.py(*m) - 2, 5, 5, color);
        }
        let ly = plot.top + plot.height + 32 + 16 * idx as i64;
        c.fill_rect(plot.left, ly, 16, 8, color);
        let label = format!(
            "trained {} / eval {} / {}",
            cv.model_strategy,
            cv.strategy,
            cv.subgroup.as_str()
        );
        c.text(plot.left + 24, ly, &label, BLACK);
    }
    c.into_png()
}

/// Scatter of 2D projected embeddings colored by strategy.
pub fn render_projection(points: &[ProjectedPoint]) -> Result<Vec<u8>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to render".into()));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite projected point".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let (sx, sy) = ((x1 - x0).max(1e-9), (y1 - y0).max(1e-9));
    let size = 400;
    let (left, top) = (16, 16);
    let strategies: BTreeMap<MaskingStrategy, Color> = MaskingStrategy::ALL
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, [BLUE, ORANGE, PALETTE[0], PALETTE[1], PALETTE[2]][i]))
        .collect();
    let present: Vec<MaskingStrategy> = strategies.keys().copied().filter(|s| points.iter().any(|p| p.strategy == *s)).collect();
    let mut c = Canvas::new((size + 2 * left) as u32, (size + top + 24 + 16 * present.len() as i64) as u32);
    c.stroke_rect(left, top, size, size, GRID);
    for p in points {
        let px = left + ((p.x - x0) / sx * (size - 6) as f64).round() as i64 + 3;
        let py = top + ((1.0 - (p.y - y0) / sy) * (size - 6) as f64).round() as i64 + 3;
        c.fill_rect(px - 1, py - 1, 3, 3, strategies[&p.strategy]);
    }
    for (i, s) in present.iter().enumerate() {
        let ly = top + size + 12 + 16 * i as i64;
        c.fill_rect(left, ly, 16, 8, strategies[s]);
        c.text(left + 24, ly, s.as_str(), BLACK);
    }
    c.into_png()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::MeanStd;

    fn identity_matrix() -> AucMatrix {
        let s = MaskingStrategy::ALL.to_vec();
        let cells = (0..5)
            .map(|i| (0..5).map(|j| MeanStd { mean: if i == j { 1.0 } else { 0.5 }, std: 0.0 }).collect())
            .collect();
        AucMatrix {
            class_name: "c".into(),
            strategies: s,
            cells,
            fold_aucs: vec![vec![vec![]; 5]; 5],
        }
    }

    #[test]
    fn matrix_range_is_per_figure() {
        assert_eq!(matrix_range(&identity_matrix()), (0.5, 1.0));
    }

    #[test]
    fn diagonal_at_scale_maximum() {
        let png = render_heatmap(&identity_matrix(), None).unwrap();
        let img = image::load_from_memory(&png).unwrap().to_rgb8();
        // corner of the first diagonal cell, away from the text
        let p = img.get_pixel(120 + 4, 56 + 4).0;
        assert_eq!(p, colormap(1.0));
        let q = img.get_pixel(120 + CELL as u32 + 4, 56 + 4).0;
        assert_eq!(q, colormap(0.0));
    }

    #[test]
    fn nan_and_incomplete_rejected() {
        let mut m = identity_matrix();
        m.cells[2][3].mean = f64::NAN;
        assert!(matches!(render_heatmap(&m, None), Err(Error::InvalidArgument(_))));
        let mut m = identity_matrix();
        m.cells.pop();
        assert!(matches!(render_heatmap(&m, None), Err(Error::IncompleteRun(_))));
    }
}

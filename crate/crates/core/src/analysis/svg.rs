//! Self-contained SVG heatmaps for transition matrices.
//!
//! The output embeds everything it needs (no scripts, no external fonts or
//! stylesheets), so the file renders identically in a browser, a notebook,
//! or a report pipeline that inlines it.

use crate::analysis::TransitionMatrix;
use crate::judge::ResponseState;

const CELL_W: f64 = 110.0;
const CELL_H: f64 = 64.0;
const MARGIN_LEFT: f64 = 130.0;
const MARGIN_TOP: f64 = 96.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 24.0;
const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";

/// Linear ramp from near-white to a deep blue, mapped over cell intensity.
fn fill_color(intensity: f64) -> String {
    let t = intensity.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the matrix as an annotated heatmap: one shaded rect and one
/// value label per cell, baseline states down the left, contrast states
/// across the top. Shading is normalised to the largest cell so sparse
/// matrices stay readable.
pub fn matrix_to_svg(matrix: &TransitionMatrix, title: &str) -> String {
    let row_states = matrix.row_states();
    let n_rows = row_states.len();
    let n_cols = ResponseState::ORDER.len();
    let width = MARGIN_LEFT + CELL_W * n_cols as f64 + MARGIN_RIGHT;
    let height = MARGIN_TOP + CELL_H * n_rows as f64 + MARGIN_BOTTOM;

    let max_cell = row_states
        .iter()
        .flat_map(|base| {
            ResponseState::ORDER
                .iter()
                .map(|con| matrix.cell(*base, *con).expect("row state has cells"))
        })
        .fold(0.0f64, f64::max);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width} {height}\" \
         width=\"{width}\" height=\"{height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"28\" {FONT} font-size=\"18\" font-weight=\"bold\" \
         text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        esc(title)
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"50\" {FONT} font-size=\"12\" fill=\"#555\" \
         text-anchor=\"middle\">rows: baseline state, columns: contrast state, \
         cells: % of {} samples</text>\n",
        width / 2.0,
        matrix.n_samples()
    ));

    for (col, state) in ResponseState::ORDER.iter().enumerate() {
        let x = MARGIN_LEFT + CELL_W * (col as f64 + 0.5);
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"{}\" {FONT} font-size=\"12\" text-anchor=\"middle\" \
             class=\"col-label\">{}</text>\n",
            MARGIN_TOP - 10.0,
            state.label()
        ));
    }

    for (row, base) in row_states.iter().enumerate() {
        let y = MARGIN_TOP + CELL_H * (row as f64 + 0.5);
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT} font-size=\"12\" text-anchor=\"end\" \
             dominant-baseline=\"middle\" class=\"row-label\">{}</text>\n",
            MARGIN_LEFT - 10.0,
            y,
            base.label()
        ));
        for (col, con) in ResponseState::ORDER.iter().enumerate() {
            let value = matrix.cell(*base, *con).expect("row state has cells");
            let x = MARGIN_LEFT + CELL_W * col as f64;
            let top = MARGIN_TOP + CELL_H * row as f64;
            let intensity = if max_cell > 0.0 { value / max_cell } else { 0.0 };
            let text_fill = if intensity > 0.55 { "white" } else { "#222" };
            svg.push_str(&format!(
                "  <rect x=\"{x}\" y=\"{top}\" width=\"{CELL_W}\" height=\"{CELL_H}\" \
                 fill=\"{}\" stroke=\"#999\" stroke-width=\"1\"/>\n",
                fill_color(intensity)
            ));
            svg.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\" {FONT} font-size=\"14\" text-anchor=\"middle\" \
                 dominant-baseline=\"middle\" fill=\"{text_fill}\" \
                 class=\"cell-value\">{value:.1}</text>\n",
                x + CELL_W / 2.0,
                top + CELL_H / 2.0,
            ));
        }
    }

    svg.push_str("</svg>\n");
    svg
}

//! Transition matrices and accuracy tables over judged runs.
//!
//! The transition matrix pairs two verdict sets for the same samples, a
//! baseline decode and a contrastive decode, and reports where each
//! baseline state moved. Cells are percentages of the population, so a
//! matrix always sums to 100 and every cell maps back to an integer count;
//! both facts are enforced rather than assumed, because the CSV files these
//! matrices round-trip through are the artifacts downstream plots consume.

mod svg;

pub use svg::matrix_to_svg;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::judge::{ResponseState, Verdict};

/// Tolerance for the sum-to-100 and integral-count invariants.
pub const MATRIX_TOL: f64 = 1e-9;

const STATE_COUNT: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no verdicts to analyse")]
    Empty,
    #[error("duplicate sample id {0:?} in a verdict set")]
    DuplicateId(String),
    #[error(
        "verdict sets are misaligned: missing in contrast {missing_in_contrast:?}, \
         missing in baseline {missing_in_baseline:?}"
    )]
    Misaligned {
        missing_in_contrast: Vec<String>,
        missing_in_baseline: Vec<String>,
    },
    #[error("baseline has no wrong answers, the errors-only view is undefined")]
    NoBaselineErrors,
    #[error("operation requires the full view, got {0}")]
    NotFullView(&'static str),
    #[error("matrix views differ, cannot combine")]
    MixedViews,
    #[error("matrix invariant violated: {0}")]
    Invariant(String),
    #[error("malformed matrix csv: {0}")]
    Parse(String),
    #[error("inconsistent verdict: {0}")]
    Verdict(#[from] crate::judge::JudgeError),
    #[error("csv i/o: {0}")]
    Csv(#[from] csv::Error),
}

/// Which population the percentages are over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixView {
    /// All paired samples; five baseline rows.
    Full,
    /// Only samples the baseline got wrong; four baseline rows.
    ErrorsOnly,
}

impl MatrixView {
    /// File-name suffix for emitted artifacts.
    pub fn label(self) -> &'static str {
        match self {
            MatrixView::Full => "full",
            MatrixView::ErrorsOnly => "errors_only",
        }
    }

    fn row_states(self) -> &'static [ResponseState] {
        match self {
            MatrixView::Full => &ResponseState::ORDER,
            MatrixView::ErrorsOnly => &ResponseState::ORDER[..4],
        }
    }
}

/// Row-stochastic-in-aggregate transition table. Rows are baseline states,
/// columns contrast states, cells percentages of `n_samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    view: MatrixView,
    n_samples: usize,
    rows: Vec<[f64; STATE_COUNT]>,
}

impl TransitionMatrix {
    fn from_counts(
        view: MatrixView,
        counts: &[[u64; STATE_COUNT]],
        n_samples: usize,
    ) -> Result<Self, AnalysisError> {
        if n_samples == 0 {
            return Err(AnalysisError::Empty);
        }
        let rows = counts
            .iter()
            .map(|row| {
                let mut cells = [0.0; STATE_COUNT];
                for (cell, count) in cells.iter_mut().zip(row) {
                    *cell = 100.0 * *count as f64 / n_samples as f64;
                }
                cells
            })
            .collect();
        let matrix = TransitionMatrix { view, n_samples, rows };
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn view(&self) -> MatrixView {
        self.view
    }

    /// Population the percentages are over: all samples for the full view,
    /// baseline-wrong samples for the errors-only view.
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Baseline states with a row in this view, in canonical order.
    pub fn row_states(&self) -> &'static [ResponseState] {
        self.view.row_states()
    }

    /// Cell percentage, or `None` when the view has no such row.
    pub fn cell(&self, base: ResponseState, contrast: ResponseState) -> Option<f64> {
        let row = self.row_states().iter().position(|s| *s == base)?;
        Some(self.rows[row][contrast.index()])
    }

    /// Integer pair counts recovered from the percentages, row-aligned with
    /// [`Self::row_states`].
    pub fn counts(&self) -> Vec<[u64; STATE_COUNT]> {
        self.rows
            .iter()
            .map(|row| {
                let mut counts = [0u64; STATE_COUNT];
                for (count, cell) in counts.iter_mut().zip(row) {
                    *count = (cell * self.n_samples as f64 / 100.0).round() as u64;
                }
                counts
            })
            .collect()
    }

    /// Enforces the three structural invariants: non-negative cells, a
    /// grand total of 100, and every cell mapping back to a whole count.
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.rows.len() != self.view.row_states().len() {
            return Err(AnalysisError::Invariant(format!(
                "{} rows in a {} view",
                self.rows.len(),
                self.view.label()
            )));
        }
        let mut total = 0.0;
        for (row, state) in self.rows.iter().zip(self.row_states()) {
            for (cell, contrast) in row.iter().zip(ResponseState::ORDER) {
                if !cell.is_finite() || *cell < 0.0 {
                    return Err(AnalysisError::Invariant(format!(
                        "cell ({state}, {contrast}) is {cell}"
                    )));
                }
                let scaled = cell * self.n_samples as f64 / 100.0;
                if (scaled - scaled.round()).abs() > MATRIX_TOL {
                    return Err(AnalysisError::Invariant(format!(
                        "cell ({state}, {contrast}) = {cell} is not a whole count over {}",
                        self.n_samples
                    )));
                }
                total += cell;
            }
        }
        if (total - 100.0).abs() > MATRIX_TOL {
            return Err(AnalysisError::Invariant(format!("cells sum to {total}, expected 100")));
        }
        Ok(())
    }
}

/// Pairs the two verdict sets by sample id. Both sets must cover exactly
/// the same ids; anything unpaired is reported, not dropped, because a
/// silently shrunken population would skew every percentage.
fn pair_verdicts<'v>(
    baseline: &'v [Verdict],
    contrast: &'v [Verdict],
) -> Result<Vec<(&'v Verdict, &'v Verdict)>, AnalysisError> {
    if baseline.is_empty() && contrast.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut by_id: HashMap<&str, &Verdict> = HashMap::with_capacity(contrast.len());
    for v in contrast {
        v.validate()?;
        if by_id.insert(v.sample_id.as_str(), v).is_some() {
            return Err(AnalysisError::DuplicateId(v.sample_id.clone()));
        }
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut pairs = Vec::with_capacity(baseline.len());
    let mut missing_in_contrast = Vec::new();
    for b in baseline {
        b.validate()?;
        if !seen.insert(b.sample_id.as_str()) {
            return Err(AnalysisError::DuplicateId(b.sample_id.clone()));
        }
        match by_id.get(b.sample_id.as_str()) {
            Some(c) => pairs.push((b, *c)),
            None => missing_in_contrast.push(b.sample_id.clone()),
        }
    }
    let mut missing_in_baseline: Vec<String> = contrast
        .iter()
        .filter(|c| !seen.contains(c.sample_id.as_str()))
        .map(|c| c.sample_id.clone())
        .collect();
    if !missing_in_contrast.is_empty() || !missing_in_baseline.is_empty() {
        missing_in_contrast.sort();
        missing_in_baseline.sort();
        return Err(AnalysisError::Misaligned { missing_in_contrast, missing_in_baseline });
    }
    Ok(pairs)
}

/// Full-view transition matrix over all paired samples.
pub fn build_matrix(
    baseline: &[Verdict],
    contrast: &[Verdict],
) -> Result<TransitionMatrix, AnalysisError> {
    let pairs = pair_verdicts(baseline, contrast)?;
    let mut counts = [[0u64; STATE_COUNT]; STATE_COUNT];
    for (b, c) in &pairs {
        counts[b.state.index()][c.state.index()] += 1;
    }
    TransitionMatrix::from_counts(MatrixView::Full, &counts, pairs.len())
}

/// Restricts a full matrix to the samples the baseline got wrong and
/// renormalises so those rows again sum to 100. When the baseline had no
/// correct answers this equals the full view minus its empty last row.
pub fn errors_only_view(full: &TransitionMatrix) -> Result<TransitionMatrix, AnalysisError> {
    if full.view() != MatrixView::Full {
        return Err(AnalysisError::NotFullView(full.view().label()));
    }
    full.validate()?;
    let counts = full.counts();
    let correct_row: u64 = counts[ResponseState::Correct.index()].iter().sum();
    let wrong = full.n_samples() as u64 - correct_row;
    if wrong == 0 {
        return Err(AnalysisError::NoBaselineErrors);
    }
    TransitionMatrix::from_counts(MatrixView::ErrorsOnly, &counts[..4], wrong as usize)
}

/// Sample-weighted mean of matrices sharing a view: counts add, then the
/// combined population renormalises.
pub fn average_matrices(matrices: &[TransitionMatrix]) -> Result<TransitionMatrix, AnalysisError> {
    let first = matrices.first().ok_or(AnalysisError::Empty)?;
    let view = first.view();
    let rows = view.row_states().len();
    let mut counts = vec![[0u64; STATE_COUNT]; rows];
    let mut total = 0usize;
    for matrix in matrices {
        if matrix.view() != view {
            return Err(AnalysisError::MixedViews);
        }
        matrix.validate()?;
        total += matrix.n_samples();
        for (sum, row) in counts.iter_mut().zip(matrix.counts()) {
            for (s, c) in sum.iter_mut().zip(row) {
                *s += c;
            }
        }
    }
    TransitionMatrix::from_counts(view, &counts, total)
}

const CSV_HEADER: &str = "baseline,W_NO_AUDIO,W_REASON,W_DIRECT,W_GUESS,CORRECT";
const TOTAL_LABEL: &str = "TOTAL_SAMPLES";

/// Serialises a matrix to CSV. Cells use the shortest digit string that
/// parses back to the identical float, so `matrix_from_csv` round-trips
/// bit-exactly.
pub fn matrix_to_csv(matrix: &TransitionMatrix) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (state, row) in matrix.row_states().iter().zip(&matrix.rows) {
        out.push_str(state.label());
        for cell in row {
            out.push(',');
            out.push_str(&cell.to_string());
        }
        out.push('\n');
    }
    out.push_str(&format!("{TOTAL_LABEL},{},,,,\n", matrix.n_samples));
    out
}

/// Parses a matrix emitted by [`matrix_to_csv`], re-validating every
/// invariant so a hand-edited file cannot smuggle in an impossible table.
pub fn matrix_from_csv(text: &str) -> Result<TransitionMatrix, AnalysisError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| AnalysisError::Parse("empty file".into()))?;
    if header != CSV_HEADER {
        return Err(AnalysisError::Parse(format!("unexpected header {header:?}")));
    }

    let mut rows: Vec<(ResponseState, [f64; STATE_COUNT])> = Vec::new();
    let mut n_samples: Option<usize> = None;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default();
        if label == TOTAL_LABEL {
            let n = fields
                .next()
                .and_then(|f| f.parse::<usize>().ok())
                .ok_or_else(|| AnalysisError::Parse("bad TOTAL_SAMPLES row".into()))?;
            n_samples = Some(n);
            continue;
        }
        let state: ResponseState = label
            .parse()
            .map_err(|_| AnalysisError::Parse(format!("unknown row label {label:?}")))?;
        let mut cells = [0.0; STATE_COUNT];
        for cell in cells.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| AnalysisError::Parse(format!("row {label} is short")))?;
            *cell = field
                .parse::<f64>()
                .map_err(|e| AnalysisError::Parse(format!("row {label}: {e}")))?;
        }
        rows.push((state, cells));
    }

    let n_samples =
        n_samples.ok_or_else(|| AnalysisError::Parse("missing TOTAL_SAMPLES row".into()))?;
    let view = match rows.len() {
        5 => MatrixView::Full,
        4 => MatrixView::ErrorsOnly,
        n => return Err(AnalysisError::Parse(format!("{n} state rows"))),
    };
    for (found, expected) in rows.iter().zip(view.row_states()) {
        if found.0 != *expected {
            return Err(AnalysisError::Parse(format!(
                "row order: found {}, expected {}",
                found.0, expected
            )));
        }
    }
    let matrix = TransitionMatrix {
        view,
        n_samples,
        rows: rows.into_iter().map(|(_, cells)| cells).collect(),
    };
    matrix.validate()?;
    Ok(matrix)
}

/// Counts behind one accuracy figure. `unjudged` samples are excluded from
/// the denominator and reported alongside, never folded into wrong.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub correct: u64,
    pub judged: u64,
    pub unjudged: u64,
}

impl AccuracyCell {
    pub fn percent(&self) -> Option<f64> {
        (self.judged > 0).then(|| 100.0 * self.correct as f64 / self.judged as f64)
    }

    fn absorb(&mut self, correct: Option<bool>) {
        match correct {
            Some(true) => {
                self.correct += 1;
                self.judged += 1;
            }
            Some(false) => self.judged += 1,
            None => self.unjudged += 1,
        }
    }

    fn merge(&mut self, other: &AccuracyCell) {
        self.correct += other.correct;
        self.judged += other.judged;
        self.unjudged += other.unjudged;
    }
}

/// One judged sample as the accuracy table consumes it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgedSample {
    pub sample_id: String,
    pub task: String,
    /// `None` when the sample has not been judged yet.
    pub correct: Option<bool>,
}

/// Per-method accuracy across task tags, with a pooled overall column.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub tasks: Vec<String>,
    pub rows: Vec<AccuracyRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub method: String,
    /// Aligned with [`AccuracyTable::tasks`].
    pub per_task: Vec<AccuracyCell>,
    pub overall: AccuracyCell,
}

impl AccuracyTable {
    /// Method with the highest pooled accuracy; earlier rows win ties.
    pub fn best_method(&self) -> Option<&str> {
        self.rows
            .iter()
            .filter_map(|r| r.overall.percent().map(|p| (r.method.as_str(), p)))
            .fold(None, |best: Option<(&str, f64)>, (m, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((m, p)),
            })
            .map(|(m, _)| m)
    }
}

/// Builds the accuracy table. Task columns are the sorted union of task
/// tags; methods keep their input order.
pub fn accuracy_table(
    per_method: &[(String, Vec<JudgedSample>)],
) -> Result<AccuracyTable, AnalysisError> {
    if per_method.is_empty() || per_method.iter().all(|(_, s)| s.is_empty()) {
        return Err(AnalysisError::Empty);
    }
    let tasks: Vec<String> = per_method
        .iter()
        .flat_map(|(_, samples)| samples.iter().map(|s| s.task.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut rows = Vec::with_capacity(per_method.len());
    for (method, samples) in per_method {
        let mut per_task: BTreeMap<&str, AccuracyCell> =
            tasks.iter().map(|t| (t.as_str(), AccuracyCell::default())).collect();
        let mut overall = AccuracyCell::default();
        let mut seen = BTreeSet::new();
        for sample in samples {
            if !seen.insert(sample.sample_id.as_str()) {
                return Err(AnalysisError::DuplicateId(sample.sample_id.clone()));
            }
            per_task
                .get_mut(sample.task.as_str())
                .expect("task came from the union")
                .absorb(sample.correct);
            overall.absorb(sample.correct);
        }
        rows.push(AccuracyRow {
            method: method.clone(),
            per_task: tasks.iter().map(|t| per_task[t.as_str()]).collect(),
            overall,
        });
    }
    Ok(AccuracyTable { tasks, rows })
}

fn percent_field(cell: &AccuracyCell) -> String {
    match cell.percent() {
        Some(p) => format!("{p:.1}"),
        None => String::new(),
    }
}

/// Long-form CSV: one row per method and task, plus an `ALL` pooled row per
/// method. Percentages carry one decimal; an empty field means nothing was
/// judged.
pub fn accuracy_to_csv(table: &AccuracyTable) -> String {
    let mut out = String::from("method,task,correct,judged,unjudged,accuracy_pct\n");
    for row in &table.rows {
        for (task, cell) in table.tasks.iter().zip(&row.per_task) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.method,
                task,
                cell.correct,
                cell.judged,
                cell.unjudged,
                percent_field(cell)
            ));
        }
        out.push_str(&format!(
            "{},ALL,{},{},{},{}\n",
            row.method,
            row.overall.correct,
            row.overall.judged,
            row.overall.unjudged,
            percent_field(&row.overall)
        ));
    }
    out
}

/// Parses a table emitted by [`accuracy_to_csv`], checking that each `ALL`
/// row equals the sum of its task rows.
pub fn accuracy_from_csv(text: &str) -> Result<AccuracyTable, AnalysisError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| AnalysisError::Parse("empty file".into()))?;
    if header != "method,task,correct,judged,unjudged,accuracy_pct" {
        return Err(AnalysisError::Parse(format!("unexpected header {header:?}")));
    }
    let mut tasks: BTreeSet<String> = BTreeSet::new();
    let mut methods: Vec<String> = Vec::new();
    let mut cells: HashMap<(String, String), AccuracyCell> = HashMap::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(AnalysisError::Parse(format!("short row {line:?}")));
        }
        let parse =
            |s: &str| s.parse::<u64>().map_err(|e| AnalysisError::Parse(format!("{line:?}: {e}")));
        let cell = AccuracyCell {
            correct: parse(fields[2])?,
            judged: parse(fields[3])?,
            unjudged: parse(fields[4])?,
        };
        let (method, task) = (fields[0].to_string(), fields[1].to_string());
        if !methods.contains(&method) {
            methods.push(method.clone());
        }
        if task != "ALL" {
            tasks.insert(task.clone());
        }
        if cells.insert((method, task), cell).is_some() {
            return Err(AnalysisError::Parse(format!("duplicate row {line:?}")));
        }
    }
    let tasks: Vec<String> = tasks.into_iter().collect();
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let per_task: Vec<AccuracyCell> = tasks
            .iter()
            .map(|t| cells.get(&(method.clone(), t.clone())).copied().unwrap_or_default())
            .collect();
        let overall = cells
            .get(&(method.clone(), "ALL".to_string()))
            .copied()
            .ok_or_else(|| AnalysisError::Parse(format!("method {method} lacks an ALL row")))?;
        let mut pooled = AccuracyCell::default();
        per_task.iter().for_each(|c| pooled.merge(c));
        if pooled != overall {
            return Err(AnalysisError::Parse(format!(
                "method {method}: ALL row disagrees with its task rows"
            )));
        }
        rows.push(AccuracyRow { method, per_task, overall });
    }
    Ok(AccuracyTable { tasks, rows })
}

/// Fixed-width text rendering for terminals and logs. The best method by
/// pooled accuracy is starred.
pub fn render_accuracy_text(table: &AccuracyTable) -> String {
    let best = table.best_method().map(str::to_string);
    let mut headers = vec!["method".to_string()];
    headers.extend(table.tasks.iter().cloned());
    headers.push("Avg".to_string());

    let mut grid: Vec<Vec<String>> = vec![headers];
    for row in &table.rows {
        let mut line = vec![if best.as_deref() == Some(row.method.as_str()) {
            format!("{} *", row.method)
        } else {
            row.method.clone()
        }];
        for cell in row.per_task.iter().chain([&row.overall]) {
            let pct = match cell.percent() {
                Some(p) => format!("{p:.1}"),
                None => "-".to_string(),
            };
            let mut text = format!("{pct} ({}/{})", cell.correct, cell.judged);
            if cell.unjudged > 0 {
                text.push_str(&format!(" [{} unjudged]", cell.unjudged));
            }
            line.push(text);
        }
        grid.push(line);
    }

    let cols = grid[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    grid.iter()
        .map(|row| {
            row.iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

//! INI-style run configuration with a strict schema.
//!
//! ```text
//! [model]
//! h0 = 1*X
//! v = Z
//! horizon = 1
//!
//! [noise]
//! alpha = 3
//! tau_c = 10
//! ```
//!
//! Operators are Pauli combinations (`0.5*X - Z + 2 I`) or explicit matrices
//! (`[[1, 0.5-0.5i], [0.5+0.5i, -1]]`). Unknown sections and keys are errors.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::operator::{DensityMatrix, Operator, Tolerances, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn label(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn operator(self) -> Operator {
        match self {
            Pauli::I => Operator::identity(2),
            Pauli::X => Operator::pauli_x(),
            Pauli::Y => Operator::pauli_y(),
            Pauli::Z => Operator::pauli_z(),
        }
    }
}

/// A Hermitian operator as written in the config file.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    /// sum of coefficient * Pauli terms (qubit only)
    Pauli(Vec<(f64, Pauli)>),
    /// row-major square matrix
    Matrix { dim: usize, entries: Vec<C64> },
}

impl OperatorSpec {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let text = text.trim();
        if text.starts_with('[') {
            parse_matrix(text)
        } else {
            parse_pauli_sum(text)
        }
    }

    pub fn build(&self) -> Result<Operator> {
        match self {
            OperatorSpec::Pauli(terms) => {
                let mut op = Operator::zeros(2);
                for &(c, p) in terms {
                    op = op.add(&p.operator().scale(C64::new(c, 0.0)))?;
                }
                Ok(op)
            }
            OperatorSpec::Matrix { dim, entries } => Operator::from_row_slice(*dim, entries),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OperatorSpec::Pauli(_) => 2,
            OperatorSpec::Matrix { dim, .. } => *dim,
        }
    }
}

impl std::fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OperatorSpec::Pauli(terms) => {
                for (k, &(c, p)) in terms.iter().enumerate() {
                    match (k, c.is_sign_negative()) {
                        (0, true) => write!(f, "-{}*{}", -c, p.label())?,
                        (0, false) => write!(f, "{}*{}", c, p.label())?,
                        (_, true) => write!(f, " - {}*{}", -c, p.label())?,
                        (_, false) => write!(f, " + {}*{}", c, p.label())?,
                    }
                }
                Ok(())
            }
            OperatorSpec::Matrix { dim, entries } => {
                write!(f, "[")?;
                for r in 0..*dim {
                    if r > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "[")?;
                    for c in 0..*dim {
                        if c > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "{}", format_complex(entries[r * dim + c]))?;
                    }
                    write!(f, "]")?;
                }
                write!(f, "]")
            }
        }
    }
}

fn format_complex(z: C64) -> String {
    if z.im.is_sign_negative() {
        format!("{}-{}i", z.re, -z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

fn parse_pauli_sum(text: &str) -> std::result::Result<OperatorSpec, String> {
    if text.is_empty() {
        return Err("empty operator".into());
    }
    let mut terms = Vec::new();
    let mut rest = text;
    let mut first = true;
    while !rest.trim().is_empty() {
        rest = rest.trim_start();
        let mut sign = 1.0;
        if let Some(r) = rest.strip_prefix('+') {
            rest = r;
        } else if let Some(r) = rest.strip_prefix('-') {
            sign = -1.0;
            rest = r;
        } else if !first {
            return Err(format!("expected `+` or `-` before `{rest}`"));
        }
        first = false;
        rest = rest.trim_start();
        // coefficient: everything up to the Pauli label
        let label_pos = rest
            .find(|ch: char| matches!(ch.to_ascii_uppercase(), 'I' | 'X' | 'Y' | 'Z'))
            .ok_or_else(|| format!("term `{}` has no Pauli label", rest.trim()))?;
        let coeff_text = rest[..label_pos].trim();
        let coeff_text = coeff_text.strip_suffix('*').unwrap_or(coeff_text).trim();
        let coeff = if coeff_text.is_empty() {
            1.0
        } else {
            coeff_text
                .parse::<f64>()
                .map_err(|_| format!("malformed coefficient `{coeff_text}`"))?
        };
        if !coeff.is_finite() {
            return Err(format!("coefficient `{coeff_text}` is not finite"));
        }
        let label = match rest.as_bytes()[label_pos].to_ascii_uppercase() {
            b'I' => Pauli::I,
            b'X' => Pauli::X,
            b'Y' => Pauli::Y,
            _ => Pauli::Z,
        };
        rest = &rest[label_pos + 1..];
        let after = rest.trim_start();
        if !(after.is_empty() || after.starts_with('+') || after.starts_with('-')) {
            return Err(format!("unexpected `{after}` after Pauli label"));
        }
        terms.push((sign * coeff, label));
    }
    Ok(OperatorSpec::Pauli(terms))
}

fn parse_matrix(text: &str) -> std::result::Result<OperatorSpec, String> {
    let rows = parse_nested_rows(text)?;
    let dim = rows.len();
    if dim == 0 {
        return Err("empty matrix".into());
    }
    let mut entries = Vec::with_capacity(dim * dim);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(format!("row {} has {} entries, expected {dim}", r + 1, row.len()));
        }
        for item in row {
            entries.push(parse_complex(item)?);
        }
    }
    Ok(OperatorSpec::Matrix { dim, entries })
}

/// `[[a, b], [c, d]]` -> rows of raw entry strings.
fn parse_nested_rows(text: &str) -> std::result::Result<Vec<Vec<String>>, String> {
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or("matrix must be enclosed in [ ]")?;
    let mut rows = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        let body = rest.strip_prefix('[').ok_or_else(|| format!("expected `[` at `{rest}`"))?;
        let close = body.find(']').ok_or("unterminated row")?;
        let row_text = &body[..close];
        if row_text.contains('[') {
            return Err("nested brackets inside a row".into());
        }
        rows.push(row_text.split(',').map(|s| s.trim().to_string()).collect());
        rest = body[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
            if rest.is_empty() {
                return Err("trailing comma after last row".into());
            }
        } else if !rest.is_empty() {
            return Err(format!("expected `,` between rows at `{rest}`"));
        }
    }
    Ok(rows)
}

/// `a`, `bi`, `a+bi`, `a-bi`, `i`, `-i`
pub fn parse_complex(text: &str) -> std::result::Result<C64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err("empty number".into());
    }
    let bad = || format!("malformed complex number `{text}`");
    let parse_real = |p: &str| -> std::result::Result<f64, String> {
        let v = p.parse::<f64>().map_err(|_| bad())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad())
        }
    };
    let parse_imag = |p: &str| -> std::result::Result<f64, String> {
        match p {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => parse_real(p),
        }
    };
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return Ok(C64::new(parse_real(&s)?, 0.0));
    };
    // split at the last sign that is not part of an exponent and not leading
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    match split {
        Some(k) => Ok(C64::new(parse_real(&body[..k])?, parse_imag(&body[k..])?)),
        None => Ok(C64::new(0.0, parse_imag(body)?)),
    }
}

/// Initial pure state.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSpec {
    /// Pauli eigenstate such as `+x` or `-z`.
    PauliEigen { axis: Pauli, positive: bool },
    /// Explicit (unnormalised) state vector `[a, b, ...]`.
    Vector(Vec<C64>),
}

impl StateSpec {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let t = text.trim();
        if let Some(inner) = t.strip_prefix('[') {
            let inner = inner.strip_suffix(']').ok_or("state vector must end with `]`")?;
            let amps = inner.split(',').map(parse_complex).collect::<std::result::Result<Vec<_>, _>>()?;
            if amps.iter().all(|z| *z == C64::ZERO) {
                return Err("state vector is zero".into());
            }
            return Ok(StateSpec::Vector(amps));
        }
        let (positive, axis) = match t.to_ascii_lowercase().as_str() {
            "+x" => (true, Pauli::X),
            "-x" => (false, Pauli::X),
            "+y" => (true, Pauli::Y),
            "-y" => (false, Pauli::Y),
            "+z" => (true, Pauli::Z),
            "-z" => (false, Pauli::Z),
            _ => return Err(format!("unknown state `{t}` (use +x, -z, ... or [a, b])")),
        };
        Ok(StateSpec::PauliEigen { axis, positive })
    }

    pub fn build(&self) -> Result<DensityMatrix> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = match self {
            StateSpec::Vector(v) => v.clone(),
            StateSpec::PauliEigen { axis, positive } => {
                let sign = if *positive { 1.0 } else { -1.0 };
                match axis {
                    Pauli::X => vec![C64::new(s, 0.0), C64::new(sign * s, 0.0)],
                    Pauli::Y => vec![C64::new(s, 0.0), C64::new(0.0, sign * s)],
                    Pauli::Z | Pauli::I => {
                        if *positive {
                            vec![C64::ONE, C64::ZERO]
                        } else {
                            vec![C64::ZERO, C64::ONE]
                        }
                    }
                }
            }
        };
        DensityMatrix::pure(&amps)
    }
}

impl std::fmt::Display for StateSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateSpec::PauliEigen { axis, positive } => {
                write!(f, "{}{}", if *positive { '+' } else { '-' }, axis.label().to_ascii_lowercase())
            }
            StateSpec::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|z| format_complex(*z)).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    OrnsteinUhlenbeck { alpha: f64, tau_c: f64 },
    /// `lag, value` table file, relative to the config file.
    Table { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    ExactOu,
    Kle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub h0: OperatorSpec,
    pub v: OperatorSpec,
    pub horizon: f64,
    pub initial_state: StateSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KleSection {
    pub grid_size: usize,
    pub candidate_modes: Option<usize>,
    pub stochastic_dim: usize,
    pub cusp_correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PceSection {
    pub order: usize,
    pub dt_max: Option<f64>,
    pub output_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSection {
    pub n_traj: usize,
    pub dt: Option<f64>,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub batch: usize,
    pub stderr_target: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub orders: Vec<usize>,
    pub dims: Vec<usize>,
    pub reference_order: Option<usize>,
    pub reference_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub noise: NoiseSpec,
    pub kle: KleSection,
    pub pce: PceSection,
    pub mc: McSection,
    pub observable: OperatorSpec,
    pub output_prefix: String,
    pub sweep: SweepSection,
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        parse_config(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_config(&std::fs::read_to_string(path)?)
    }

    /// Effective RK4 step bound.
    pub fn pce_dt_max(&self) -> f64 {
        self.pce.dt_max.unwrap_or(self.model.horizon / 2000.0)
    }

    pub fn mc_dt(&self) -> f64 {
        self.mc.dt.unwrap_or(self.model.horizon / 1000.0)
    }

    /// Output times k * horizon / output_points, k = 0..=output_points.
    pub fn output_times(&self) -> Vec<f64> {
        let n = self.pce.output_points;
        (0..=n)
            .map(|k| if k == n { self.model.horizon } else { k as f64 * self.model.horizon / n as f64 })
            .collect()
    }

    /// Canonical INI text; `parse_config(&cfg.to_ini()) == cfg`.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "h0 = {}", m.h0);
        let _ = writeln!(s, "v = {}", m.v);
        let _ = writeln!(s, "horizon = {}", m.horizon);
        let _ = writeln!(s, "initial_state = {}", m.initial_state);
        let _ = writeln!(s, "\n[noise]");
        match &self.noise {
            NoiseSpec::OrnsteinUhlenbeck { alpha, tau_c } => {
                let _ = writeln!(s, "kind = ou\nalpha = {alpha}\ntau_c = {tau_c}");
            }
            NoiseSpec::Table { path } => {
                let _ = writeln!(s, "kind = table\ntable = {path}");
            }
        }
        let k = &self.kle;
        let _ = writeln!(s, "\n[kle]\ngrid_size = {}", k.grid_size);
        if let Some(c) = k.candidate_modes {
            let _ = writeln!(s, "candidate_modes = {c}");
        }
        let _ = writeln!(s, "stochastic_dim = {}\ncusp_correction = {}", k.stochastic_dim, k.cusp_correction);
        let p = &self.pce;
        let _ = writeln!(s, "\n[pce]\norder = {}", p.order);
        if let Some(dt) = p.dt_max {
            let _ = writeln!(s, "dt_max = {dt}");
        }
        let _ = writeln!(s, "output_points = {}", p.output_points);
        let mc = &self.mc;
        let _ = writeln!(s, "\n[mc]\nn_traj = {}", mc.n_traj);
        if let Some(dt) = mc.dt {
            let _ = writeln!(s, "dt = {dt}");
        }
        let sampler = match mc.sampler {
            SamplerKind::ExactOu => "exact_ou",
            SamplerKind::Kle => "kle",
        };
        let _ = writeln!(
            s,
            "seed = {}\nsampler = {sampler}\nbatch = {}\nstderr_target = {}\nworkers = {}",
            mc.seed, mc.batch, mc.stderr_target, mc.workers
        );
        let _ = writeln!(s, "\n[observable]\nop = {}", self.observable);
        let _ = writeln!(s, "\n[output]\nprefix = {}", self.output_prefix);
        let sw = &self.sweep;
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "\n[sweep]\norders = {}\ndims = {}", join(&sw.orders), join(&sw.dims));
        if let Some(r) = sw.reference_order {
            let _ = writeln!(s, "reference_order = {r}");
        }
        if let Some(r) = sw.reference_dim {
            let _ = writeln!(s, "reference_dim = {r}");
        }
        let t = &self.tolerances;
        let _ = writeln!(
            s,
            "\n[tolerances]\nhermitian = {}\ntrace = {}\nunitary = {}\nexpectation_imag = {}\npositivity = {}",
            t.hermitian, t.trace, t.unitary, t.expectation_imag, t.positivity
        );
        s
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("model", &["h0", "v", "horizon", "initial_state"]),
    ("noise", &["kind", "alpha", "tau_c", "table"]),
    ("kle", &["grid_size", "candidate_modes", "stochastic_dim", "cusp_correction"]),
    ("pce", &["order", "dt_max", "output_points"]),
    ("mc", &["n_traj", "dt", "seed", "sampler", "batch", "stderr_target", "workers"]),
    ("observable", &["op"]),
    ("output", &["prefix"]),
    ("sweep", &["orders", "dims", "reference_order", "reference_dim"]),
    ("tolerances", &["hermitian", "trace", "unitary", "expectation_imag", "positivity"]),
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw key/value pairs per section, with line numbers.
struct Sections {
    entries: std::collections::HashMap<(String, String), Entry>,
    headers: std::collections::HashMap<String, usize>,
    last_line: usize,
}

impl Sections {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    /// Line to blame for a missing key: the section header, else end of file.
    fn anchor(&self, section: &str) -> usize {
        self.headers.get(section).copied().unwrap_or(self.last_line)
    }

    fn required(&self, section: &str, key: &str) -> Result<&Entry> {
        self.get(section, key).ok_or_else(|| Error::Config {
            line: self.anchor(section),
            message: format!("missing required field `{key}` in [{section}]"),
        })
    }

    fn parse<T>(&self, section: &str, key: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .map_err(|msg| Error::Config { line: e.line, message: format!("{section}.{key}: {msg}") }),
        }
    }

    fn parse_required<T>(&self, section: &str, key: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        let e = self.required(section, key)?;
        f(&e.value).map_err(|msg| Error::Config { line: e.line, message: format!("{section}.{key}: {msg}") })
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.get(section, key).map(|e| e.line).unwrap_or_else(|| self.anchor(section))
    }
}

fn tokenize(text: &str) -> Result<Sections> {
    let mut entries = std::collections::HashMap::new();
    let mut headers = std::collections::HashMap::new();
    let mut current: Option<String> = None;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config { line: line_no, message: format!("malformed section header `{line}`") })?
                .trim()
                .to_ascii_lowercase();
            if !SCHEMA.iter().any(|(s, _)| *s == name) {
                return Err(Error::Config { line: line_no, message: format!("unknown section [{name}]") });
            }
            if headers.insert(name.clone(), line_no).is_some() {
                return Err(Error::Config { line: line_no, message: format!("duplicate section [{name}]") });
            }
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config { line: line_no, message: format!("expected `key = value`, found `{line}`") });
        };
        let Some(section) = current.as_ref() else {
            return Err(Error::Config { line: line_no, message: "key outside of any section".into() });
        };
        let key = key.trim().to_ascii_lowercase();
        let allowed = SCHEMA.iter().find(|(s, _)| s == section).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config { line: line_no, message: format!("unknown key `{key}` in [{section}]") });
        }
        let value = value.trim().to_string();
        if value.is_empty() {
            return Err(Error::Config { line: line_no, message: format!("empty value for `{key}`") });
        }
        let prev = entries.insert((section.clone(), key.clone()), Entry { value, line: line_no });
        if prev.is_some() {
            return Err(Error::Config { line: line_no, message: format!("duplicate key `{key}` in [{section}]") });
        }
    }
    Ok(Sections { entries, headers, last_line })
}

fn strip_comment(line: &str) -> &str {
    let t = line.trim_start();
    if t.starts_with('#') || t.starts_with(';') {
        return "";
    }
    match line.find(" #") {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("malformed number `{s}`"))?;
    if !v.is_finite() || v <= 0.0 {
        return Err(format!("{v} must be positive and finite"));
    }
    Ok(v)
}

fn finite_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("malformed number `{s}`"))?;
    if !v.is_finite() {
        return Err(format!("{v} is not finite"));
    }
    Ok(v)
}

fn nonneg_f64(s: &str) -> std::result::Result<f64, String> {
    let v = finite_f64(s)?;
    if v < 0.0 {
        return Err(format!("{v} must be nonnegative"));
    }
    Ok(v)
}

fn count(s: &str) -> std::result::Result<usize, String> {
    let v: i64 = s.parse().map_err(|_| format!("malformed integer `{s}`"))?;
    usize::try_from(v).map_err(|_| format!("{v} must be nonnegative"))
}

fn positive_count(s: &str) -> std::result::Result<usize, String> {
    let v = count(s)?;
    if v == 0 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

fn boolean(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, found `{s}`")),
    }
}

fn count_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let v = s.split(',').map(|x| count(x.trim())).collect::<std::result::Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("empty list".into());
    }
    Ok(v)
}

/// Parse and validate a configuration. Every field outside `[model]` and
/// `[noise]` has a default.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let sec = tokenize(text)?;

    let h0 = sec.parse_required("model", "h0", OperatorSpec::parse)?;
    let v = sec.parse_required("model", "v", OperatorSpec::parse)?;
    let horizon = sec.parse_required("model", "horizon", positive_f64)?;
    let initial_state =
        sec.parse("model", "initial_state", StateSpec::parse)?.unwrap_or(StateSpec::PauliEigen { axis: Pauli::X, positive: true });

    let kind = sec.get("noise", "kind").map(|e| (e.value.to_ascii_lowercase(), e.line));
    let noise = match kind.as_ref().map(|(k, l)| (k.as_str(), *l)) {
        None | Some(("ou", _)) => {
            if let Some(e) = sec.get("noise", "table") {
                return Err(Error::Config { line: e.line, message: "`table` needs kind = table".into() });
            }
            NoiseSpec::OrnsteinUhlenbeck {
                alpha: sec.parse_required("noise", "alpha", finite_f64)?,
                tau_c: sec.parse_required("noise", "tau_c", positive_f64)?,
            }
        }
        Some(("table", _)) => {
            for key in ["alpha", "tau_c"] {
                if let Some(e) = sec.get("noise", key) {
                    return Err(Error::Config { line: e.line, message: format!("`{key}` is only valid for kind = ou") });
                }
            }
            NoiseSpec::Table { path: sec.required("noise", "table")?.value.clone() }
        }
        Some((other, line)) => {
            return Err(Error::Config { line, message: format!("unknown noise kind `{other}` (ou or table)") })
        }
    };

    let kle = KleSection {
        grid_size: sec.parse("kle", "grid_size", positive_count)?.unwrap_or(400),
        candidate_modes: sec.parse("kle", "candidate_modes", positive_count)?,
        stochastic_dim: sec.parse("kle", "stochastic_dim", positive_count)?.unwrap_or(1),
        cusp_correction: sec.parse("kle", "cusp_correction", boolean)?.unwrap_or(true),
    };
    let pce = PceSection {
        order: sec.parse("pce", "order", count)?.unwrap_or(2),
        dt_max: sec.parse("pce", "dt_max", positive_f64)?,
        output_points: sec.parse("pce", "output_points", positive_count)?.unwrap_or(200),
    };
    let mc = McSection {
        n_traj: sec.parse("mc", "n_traj", count)?.unwrap_or(100_000),
        dt: sec.parse("mc", "dt", positive_f64)?,
        seed: sec
            .parse("mc", "seed", |s| s.parse::<u64>().map_err(|_| format!("malformed seed `{s}`")))?
            .unwrap_or(0),
        sampler: sec
            .parse("mc", "sampler", |s| match s.to_ascii_lowercase().as_str() {
                "exact_ou" => Ok(SamplerKind::ExactOu),
                "kle" => Ok(SamplerKind::Kle),
                _ => Err(format!("unknown sampler `{s}` (exact_ou or kle)")),
            })?
            .unwrap_or(SamplerKind::ExactOu),
        batch: sec.parse("mc", "batch", positive_count)?.unwrap_or(1000),
        stderr_target: sec.parse("mc", "stderr_target", nonneg_f64)?.unwrap_or(5e-3),
        workers: sec.parse("mc", "workers", count)?.unwrap_or(0),
    };
    let observable = sec
        .parse("observable", "op", OperatorSpec::parse)?
        .unwrap_or(OperatorSpec::Pauli(vec![(1.0, Pauli::X)]));
    let output_prefix = sec.get("output", "prefix").map(|e| e.value.clone()).unwrap_or_else(|| "qpce_".into());
    let sweep = SweepSection {
        orders: sec.parse("sweep", "orders", count_list)?.unwrap_or_else(|| vec![pce.order]),
        dims: sec.parse("sweep", "dims", |s| {
            let v = count_list(s)?;
            if v.contains(&0) {
                return Err("stochastic dimensions must be at least 1".into());
            }
            Ok(v)
        })?
        .unwrap_or_else(|| vec![kle.stochastic_dim]),
        reference_order: sec.parse("sweep", "reference_order", count)?,
        reference_dim: sec.parse("sweep", "reference_dim", positive_count)?,
    };
    let defaults = Tolerances::default();
    let tolerances = Tolerances {
        hermitian: sec.parse("tolerances", "hermitian", positive_f64)?.unwrap_or(defaults.hermitian),
        trace: sec.parse("tolerances", "trace", positive_f64)?.unwrap_or(defaults.trace),
        unitary: sec.parse("tolerances", "unitary", positive_f64)?.unwrap_or(defaults.unitary),
        expectation_imag: sec.parse("tolerances", "expectation_imag", positive_f64)?.unwrap_or(defaults.expectation_imag),
        positivity: sec.parse("tolerances", "positivity", positive_f64)?.unwrap_or(defaults.positivity),
    };

    let cfg = RunConfig { model: ModelSection { h0, v, horizon, initial_state }, noise, kle, pce, mc, observable, output_prefix, sweep, tolerances };
    validate(&cfg, &sec)?;
    Ok(cfg)
}

/// Cross-field checks.
fn validate(cfg: &RunConfig, sec: &Sections) -> Result<()> {
    let err = |section: &str, key: &str, message: String| Error::Config { line: sec.line_of(section, key), message };
    let dim = cfg.model.h0.dim();
    let check_op = |spec: &OperatorSpec, section: &str, key: &str| -> Result<()> {
        if spec.dim() != dim {
            return Err(err(section, key, format!("operator is {}-dimensional but h0 is {dim}-dimensional", spec.dim())));
        }
        let op = spec.build().map_err(|e| err(section, key, e.to_string()))?;
        if !op.is_hermitian(cfg.tolerances.hermitian) {
            return Err(err(section, key, "operator is not Hermitian".into()));
        }
        Ok(())
    };
    check_op(&cfg.model.h0, "model", "h0")?;
    check_op(&cfg.model.v, "model", "v")?;
    check_op(&cfg.observable, "observable", "op")?;
    let state_dim = match &cfg.model.initial_state {
        StateSpec::Vector(v) => v.len(),
        StateSpec::PauliEigen { .. } => 2,
    };
    if state_dim != dim {
        return Err(err("model", "initial_state", format!("state has dimension {state_dim}, system has {dim}")));
    }
    if cfg.kle.grid_size < 2 {
        return Err(err("kle", "grid_size", "grid_size must be at least 2".into()));
    }
    if cfg.kle.stochastic_dim > cfg.kle.grid_size {
        return Err(err("kle", "stochastic_dim", "stochastic_dim exceeds grid_size".into()));
    }
    if let Some(c) = cfg.kle.candidate_modes {
        if c < cfg.kle.stochastic_dim || c > cfg.kle.grid_size {
            return Err(err("kle", "candidate_modes", format!("candidate_modes = {c} must lie in [stochastic_dim, grid_size]")));
        }
    }
    if cfg.mc.n_traj < 2 {
        return Err(err("mc", "n_traj", "n_traj must be at least 2".into()));
    }
    if cfg.mc_dt() > cfg.model.horizon / 100.0 * (1.0 + 1e-12) {
        return Err(err("mc", "dt", format!("dt must not exceed horizon / 100 = {}", cfg.model.horizon / 100.0)));
    }
    if cfg.mc.sampler == SamplerKind::ExactOu && matches!(cfg.noise, NoiseSpec::Table { .. }) {
        return Err(err("mc", "sampler", "exact_ou sampling needs kind = ou noise".into()));
    }
    for &s in &cfg.sweep.dims {
        if s > cfg.kle.grid_size {
            return Err(err("sweep", "dims", format!("stochastic dimension {s} exceeds grid_size")));
        }
    }
    Ok(())
}

//! Rollout traces and gait diagnostics: speed, hip phase opposition,
//! knee/hip frequency ratio, smoothed reward curves, and file output.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::ddpg::{Agent, DdpgError};
use crate::env::{BipedEnv, Environment};

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("series is constant")]
    ConstantSeries,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("series covers {periods:.2} periods of {frequency:.4} Hz, at least 4 needed")]
    TooShort { periods: f64, frequency: f64 },
    #[error("sample rate must be positive and finite")]
    SampleRate,
    #[error(transparent)]
    Agent(#[from] DdpgError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// One sample per control step; `time[k]` is the simulation time after step `k + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaitTrace {
    pub time: Vec<f64>,
    /// hipR, hipL, kneeR, kneeL.
    pub joint_angles: Vec<[f64; 4]>,
    pub joint_vels: Vec<[f64; 4]>,
    pub waist_pos: Vec<[f64; 2]>,
    pub waist_vel: Vec<[f64; 2]>,
    pub contacts: Vec<[bool; 2]>,
    pub reward: Vec<f64>,
}

pub const JOINT_NAMES: [&str; 4] = ["hip_r", "hip_l", "knee_r", "knee_l"];

const TRACE_HEADER: [&str; 16] = [
    "time",
    "hip_r",
    "hip_l",
    "knee_r",
    "knee_l",
    "hip_r_vel",
    "hip_l_vel",
    "knee_r_vel",
    "knee_l_vel",
    "waist_y",
    "waist_z",
    "waist_vy",
    "waist_vz",
    "contact_r",
    "contact_l",
    "reward",
];

impl GaitTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn joint(&self, j: usize) -> Vec<f64> {
        self.joint_angles.iter().map(|a| a[j]).collect()
    }

    /// Samples per second, from the time step of the first two samples.
    pub fn sample_rate(&self) -> Option<f64> {
        match self.time.as_slice() {
            [a, b, ..] if b > a => Some(1.0 / (b - a)),
            _ => None,
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.time.first(), self.time.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, time: f64, angles: [f64; 4], vels: [f64; 4], pos: [f64; 2], vel: [f64; 2], contacts: [bool; 2], reward: f64) {
        self.time.push(time);
        self.joint_angles.push(angles);
        self.joint_vels.push(vels);
        self.waist_pos.push(pos);
        self.waist_vel.push(vel);
        self.contacts.push(contacts);
        self.reward.push(reward);
    }
}

/// One greedy episode, one sample per control step until the episode ends.
pub fn record_rollout(agent: &Agent, env: &mut BipedEnv, seed: u64) -> Result<GaitTrace, GaitError> {
    Ok(rollout(agent, env, seed)?.trace)
}

/// A greedy episode: the trace plus how it ended.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub trace: GaitTrace,
    pub ret: f64,
    /// Waist displacement along +y since reset at the last step, m.
    pub distance: f64,
    pub fell: bool,
}

impl Rollout {
    /// Distance over elapsed control time, including the first period.
    pub fn mean_speed(&self, control_period: f64) -> f64 {
        self.distance / (self.trace.len().max(1) as f64 * control_period)
    }
}

pub fn rollout(agent: &Agent, env: &mut BipedEnv, seed: u64) -> Result<Rollout, GaitError> {
    let mut obs = env.reset(seed);
    let mut out = Rollout::default();
    loop {
        let action = agent.policy(&obs)?;
        let step = env.step(&action).map_err(DdpgError::from)?;
        let s = env.state();
        out.trace
            .push(s.sim_time, s.joint_angles, s.joint_vels, s.waist_pos, s.waist_vel, s.foot_contact, step.reward);
        out.ret += step.reward;
        out.distance = step.distance;
        out.fell = step.fell;
        obs = step.observation;
        if step.done {
            break;
        }
    }
    Ok(out)
}

/// `(final y − initial y) / duration`.
pub fn average_speed(trace: &GaitTrace) -> Result<f64, GaitError> {
    let (first, last) = match (trace.waist_pos.first(), trace.waist_pos.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(GaitError::EmptyTrace),
    };
    let duration = trace.duration();
    if duration <= 0.0 {
        return Err(GaitError::EmptyTrace);
    }
    Ok((last[0] - first[0]) / duration)
}

fn centered(series: &[f64]) -> Result<Vec<f64>, GaitError> {
    if series.is_empty() {
        return Err(GaitError::EmptyTrace);
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let out: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let scale = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale.is_nan() || scale <= 1e-12 * (1.0 + mean.abs()) {
        return Err(GaitError::ConstantSeries);
    }
    Ok(out)
}

const ZERO_PAD: usize = 4;

/// Magnitude of the Hann-windowed, zero-padded spectrum of a centred series.
fn spectrum(centered: &[f64]) -> Vec<f64> {
    let n = centered.len();
    let len = (n * ZERO_PAD).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|k| {
            if k < n {
                let w = if n > 1 {
                    0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos()
                } else {
                    1.0
                };
                Complex::new(centered[k] * w, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    buf[..len / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// Frequency of the largest non-DC bin of `magnitude`, refined by a parabola
/// through the peak and its neighbours.
fn peak_frequency(magnitude: &[f64], fft_len: usize, sample_rate: f64) -> f64 {
    // Bins near DC carry the window's main lobe around zero frequency.
    let start = ZERO_PAD.max(1);
    let mut best = start.min(magnitude.len() - 1);
    for k in start..magnitude.len() {
        if magnitude[k] > magnitude[best] {
            best = k;
        }
    }
    let mut offset = 0.0;
    if best > 0 && best + 1 < magnitude.len() {
        let (a, b, c) = (magnitude[best - 1], magnitude[best], magnitude[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom != 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    (best as f64 + offset) * sample_rate / fft_len as f64
}

fn fft_len(n: usize) -> usize {
    (n * ZERO_PAD).next_power_of_two()
}

fn require_periods(n: usize, frequency: f64, sample_rate: f64) -> Result<(), GaitError> {
    let periods = n as f64 * frequency / sample_rate;
    if periods < 4.0 {
        return Err(GaitError::TooShort { periods, frequency });
    }
    Ok(())
}

fn check_rate(sample_rate: f64) -> Result<(), GaitError> {
    if sample_rate > 0.0 && sample_rate.is_finite() {
        Ok(())
    } else {
        Err(GaitError::SampleRate)
    }
}

/// Dominant frequency in Hz.
pub fn dominant_frequency(series: &[f64], sample_rate: f64) -> Result<f64, GaitError> {
    check_rate(sample_rate)?;
    let x = centered(series)?;
    let f = peak_frequency(&spectrum(&x), fft_len(x.len()), sample_rate);
    require_periods(x.len(), f, sample_rate)?;
    Ok(f)
}

/// Phase lag in `[0, π]` between two series at their shared dominant
/// frequency, from the peak of the normalized circular cross-correlation
/// within half a period of zero lag.
pub fn phase_difference(a: &[f64], b: &[f64], sample_rate: f64) -> Result<f64, GaitError> {
    check_rate(sample_rate)?;
    if a.len() != b.len() {
        return Err(GaitError::LengthMismatch(a.len(), b.len()));
    }
    let xa = centered(a)?;
    let xb = centered(b)?;
    let n = xa.len();
    let shared: Vec<f64> = spectrum(&xa).iter().zip(spectrum(&xb)).map(|(p, q)| p * q).collect();
    let f = peak_frequency(&shared, fft_len(n), sample_rate);
    require_periods(n, f, sample_rate)?;

    let norm = (xa.iter().map(|x| x * x).sum::<f64>() * xb.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let corr = |lag: i64| -> f64 {
        let shift = lag.rem_euclid(n as i64) as usize;
        (0..n).map(|i| xa[i] * xb[(i + shift) % n]).sum::<f64>() / norm
    };
    let period = sample_rate / f;
    let reach = (period / 2.0).ceil() as i64;
    let mut best = 0i64;
    let mut best_val = corr(0);
    // Walk outward from zero so equal peaks resolve towards the smaller lag.
    for m in 1..=reach {
        for lag in [m, -m] {
            let v = corr(lag);
            if v > best_val {
                best = lag;
                best_val = v;
            }
        }
    }
    let (l, c, r) = (corr(best - 1), best_val, corr(best + 1));
    let denom = l - 2.0 * c + r;
    let offset = if denom != 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let lag = best as f64 + offset;
    let phase = (2.0 * PI * lag / period).rem_euclid(2.0 * PI);
    Ok(if phase > PI { 2.0 * PI - phase } else { phase })
}

/// Trailing mean over the last `min(window, k)` entries at each index `k`.
pub fn reward_curve(returns: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..returns.len())
        .map(|k| {
            let tail = &returns[(k + 1).saturating_sub(window)..=k];
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitReport {
    pub samples: usize,
    pub duration: f64,
    pub average_speed: f64,
    pub hip_phase: Result<f64, String>,
    pub hip_frequency: Result<f64, String>,
    pub knee_frequency: Result<f64, String>,
}

impl GaitReport {
    pub fn frequency_ratio(&self) -> Option<f64> {
        match (&self.knee_frequency, &self.hip_frequency) {
            (Ok(k), Ok(h)) if *h > 0.0 => Some(k / h),
            _ => None,
        }
    }
}

fn mean_frequency(a: &[f64], b: &[f64], rate: f64) -> Result<f64, String> {
    let fa = dominant_frequency(a, rate).map_err(|e| e.to_string())?;
    let fb = dominant_frequency(b, rate).map_err(|e| e.to_string())?;
    Ok(0.5 * (fa + fb))
}

/// Gait summary of one trace. Spectral figures that cannot be computed
/// (too short, motionless joints) are reported as errors in place.
pub fn analyze(trace: &GaitTrace) -> Result<GaitReport, GaitError> {
    if trace.is_empty() {
        return Err(GaitError::EmptyTrace);
    }
    let rate = trace.sample_rate().ok_or(GaitError::SampleRate)?;
    let [hr, hl, kr, kl] = [0, 1, 2, 3].map(|j| trace.joint(j));
    Ok(GaitReport {
        samples: trace.len(),
        duration: trace.duration(),
        average_speed: average_speed(trace)?,
        hip_phase: phase_difference(&hr, &hl, rate).map_err(|e| e.to_string()),
        hip_frequency: mean_frequency(&hr, &hl, rate),
        knee_frequency: mean_frequency(&kr, &kl, rate),
    })
}

impl std::fmt::Display for GaitReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |r: &Result<f64, String>| match r {
            Ok(v) => format!("{v:.6}"),
            Err(e) => format!("n/a ({e})"),
        };
        writeln!(f, "samples: {}", self.samples)?;
        writeln!(f, "duration_s: {:.6}", self.duration)?;
        writeln!(f, "average_speed_m_per_s: {:.6}", self.average_speed)?;
        writeln!(f, "hip_phase_rad: {}", show(&self.hip_phase))?;
        writeln!(f, "hip_frequency_hz: {}", show(&self.hip_frequency))?;
        writeln!(f, "knee_frequency_hz: {}", show(&self.knee_frequency))?;
        match self.frequency_ratio() {
            Some(r) => writeln!(f, "knee_hip_frequency_ratio: {r:.6}"),
            None => writeln!(f, "knee_hip_frequency_ratio: n/a"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    PlotData,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "plotdata" => Ok(Format::PlotData),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown format '{other}'")),
        }
    }
}

/// 17 significant digits: enough to read back the same f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn trace_rows(trace: &GaitTrace) -> Vec<[f64; 16]> {
    (0..trace.len())
        .map(|k| {
            let a = trace.joint_angles[k];
            let v = trace.joint_vels[k];
            let p = trace.waist_pos[k];
            let w = trace.waist_vel[k];
            let c = trace.contacts[k];
            [
                trace.time[k],
                a[0],
                a[1],
                a[2],
                a[3],
                v[0],
                v[1],
                v[2],
                v[3],
                p[0],
                p[1],
                w[0],
                w[1],
                c[0] as u8 as f64,
                c[1] as u8 as f64,
                trace.reward[k],
            ]
        })
        .collect()
}

pub fn trace_to_csv(trace: &GaitTrace) -> Result<String, GaitError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER)?;
    for row in trace_rows(trace) {
        w.write_record(row.iter().map(|x| fmt_f64(*x)))?;
    }
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

/// Parses the CSV produced by [`trace_to_csv`].
pub fn trace_from_csv(text: &str) -> Result<GaitTrace, GaitError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(GaitError::Parse {
            line: 1,
            message: format!("expected header {}", TRACE_HEADER.join(",")),
        });
    }
    let mut trace = GaitTrace::default();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut vals = [0.0; 16];
        for (i, v) in vals.iter_mut().enumerate() {
            let field = record.get(i).ok_or_else(|| GaitError::Parse {
                line,
                message: format!("missing column '{}'", TRACE_HEADER[i]),
            })?;
            *v = field.trim().parse().map_err(|_| GaitError::Parse {
                line,
                message: format!("column '{}': cannot parse '{field}'", TRACE_HEADER[i]),
            })?;
        }
        if let Some(prev) = trace.time.last() {
            if vals[0] <= *prev {
                return Err(GaitError::Parse {
                    line,
                    message: "time is not strictly increasing".into(),
                });
            }
        }
        trace.push(
            vals[0],
            [vals[1], vals[2], vals[3], vals[4]],
            [vals[5], vals[6], vals[7], vals[8]],
            [vals[9], vals[10]],
            [vals[11], vals[12]],
            [vals[13] != 0.0, vals[14] != 0.0],
            vals[15],
        );
    }
    Ok(trace)
}

fn trace_plotdata(trace: &GaitTrace) -> String {
    let mut out = format!("# {}\n", TRACE_HEADER.join(" "));
    for row in trace_rows(trace) {
        let cols: Vec<String> = row.iter().map(|x| fmt_f64(*x)).collect();
        out.push_str(&cols.join(" "));
        out.push('\n');
    }
    out
}

/// A named polyline for [`svg_line_chart`].
pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Self-contained SVG line chart with axes, ticks, labels and a legend.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.y.iter().copied()));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>", left + pw / 2.0, escape(title));
    let _ = writeln!(
        out,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/><text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{left}\" y2=\"{py:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            left - 5.0,
            left - 8.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{}</text>",
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .x
            .iter()
            .zip(s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            left + pw + 12.0,
            left + pw + 32.0,
            left + pw + 38.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Hip or knee angles of a trace against time.
pub fn joint_svg(trace: &GaitTrace, joints: [usize; 2], title: &str) -> String {
    let ys: Vec<Vec<f64>> = joints.iter().map(|j| trace.joint(*j)).collect();
    let series: Vec<Series> = joints
        .iter()
        .zip(&ys)
        .map(|(j, y)| Series {
            name: JOINT_NAMES[*j],
            x: &trace.time,
            y,
        })
        .collect();
    svg_line_chart(title, "time (s)", "angle (rad)", &series)
}

pub fn trace_text(trace: &GaitTrace, format: Format) -> Result<String, GaitError> {
    Ok(match format {
        Format::Csv => trace_to_csv(trace)?,
        Format::PlotData => trace_plotdata(trace),
        Format::Svg => {
            let ys: Vec<Vec<f64>> = (0..4).map(|j| trace.joint(j)).collect();
            let series: Vec<Series> = (0..4)
                .map(|j| Series {
                    name: JOINT_NAMES[j],
                    x: &trace.time,
                    y: &ys[j],
                })
                .collect();
            svg_line_chart("Joint angles", "time (s)", "angle (rad)", &series)
        }
    })
}

/// Per-episode returns with their trailing mean.
pub fn curve_text(returns: &[f64], window: usize, format: Format) -> Result<String, GaitError> {
    let curve = reward_curve(returns, window);
    let episodes: Vec<f64> = (1..=returns.len()).map(|k| k as f64).collect();
    Ok(match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["episode", "return", "trailing_mean"])?;
            for k in 0..returns.len() {
                w.write_record([(k + 1).to_string(), fmt_f64(returns[k]), fmt_f64(curve[k])])?;
            }
            let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
            String::from_utf8(bytes).expect("csv output is ascii")
        }
        Format::PlotData => {
            let mut out = String::from("# episode return trailing_mean\n");
            for k in 0..returns.len() {
                let _ = writeln!(out, "{} {} {}", k + 1, fmt_f64(returns[k]), fmt_f64(curve[k]));
            }
            out
        }
        Format::Svg => svg_line_chart(
            &format!("Average reward per {window} episodes"),
            "episode",
            "return",
            &[
                Series {
                    name: "episode return",
                    x: &episodes,
                    y: returns,
                },
                Series {
                    name: "trailing mean",
                    x: &episodes,
                    y: &curve,
                },
            ],
        ),
    })
}

pub fn export_trace(trace: &GaitTrace, path: &Path, format: Format) -> Result<(), GaitError> {
    std::fs::write(path, trace_text(trace, format)?)?;
    Ok(())
}

pub fn export_curve(returns: &[f64], window: usize, path: &Path, format: Format) -> Result<(), GaitError> {
    std::fs::write(path, curve_text(returns, window, format)?)?;
    Ok(())
}

/// Trace with antiphase hips at `hip_hz` and knees at twice that frequency.
pub fn synthetic_gait(hip_hz: f64, seconds: f64, sample_rate: f64, speed: f64) -> GaitTrace {
    let n = (seconds * sample_rate).round() as usize;
    let mut trace = GaitTrace::default();
    let w = 2.0 * PI * hip_hz;
    for k in 0..n {
        let t = (k + 1) as f64 / sample_rate;
        let angles = [
            0.4 * (w * t).sin(),
            0.4 * (w * t + PI).sin(),
            0.5 + 0.3 * (2.0 * w * t).sin(),
            0.5 + 0.3 * (2.0 * w * t + PI / 2.0).sin(),
        ];
        let vels = [
            0.4 * w * (w * t).cos(),
            0.4 * w * (w * t + PI).cos(),
            0.6 * w * (2.0 * w * t).cos(),
            0.6 * w * (2.0 * w * t + PI / 2.0).cos(),
        ];
        let contacts = [angles[0] < 0.0, angles[1] < 0.0];
        trace.push(t, angles, vels, [speed * t, 0.42], [speed, 0.0], contacts, speed * 0.02);
    }
    trace
}

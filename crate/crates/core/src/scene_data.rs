//! Trajectory ingestion, fixed-length scene windows, kinematic channels and
//! synthetic scenarios.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const T_OBS: usize = 8;
pub const T_PRED: usize = 12;
/// Step duration of the ETH/UCY scenes after down-sampling (2.5 Hz).
pub const ETHUCY_DT: f64 = 0.4;
/// Step duration of SDD after down-sampling (2 Hz).
pub const SDD_DT: f64 = 0.5;

pub const ETHUCY_SCENES: [&str; 5] = ["ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2"];

/// SDD videos held out for testing.
pub const SDD_TEST_VIDEOS: [&str; 17] = [
    "coupa_0", "coupa_1", "gates_2", "hyang_0", "hyang_1", "hyang_3", "hyang_8", "little_0", "little_1", "little_2",
    "little_3", "nexus_5", "nexus_6", "quad_0", "quad_1", "quad_2", "quad_3",
];

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackRecord {
    pub frame_id: i64,
    pub ped_id: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// `frame ped x y`, whitespace separated.
    Ethucy,
    /// Stanford Drone annotations:
    /// `track xmin ymin xmax ymax frame lost occluded generated "label"`.
    Sdd,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ethucy" | "eth" | "ucy" => Ok(Self::Ethucy),
            "sdd" => Ok(Self::Sdd),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

fn field<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse { line, message: format!("missing {what}") })?;
    tok.parse::<T>().map_err(|_| Error::Parse { line, message: format!("non-numeric {what} {tok:?}") })
}

/// Parses whitespace-separated records. Frame and pedestrian ids may be
/// written as floats (`10.0`) as long as they are integral.
pub fn parse_records(text: &str, format: DataFormat) -> Result<Vec<TrackRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let mut toks = raw.split_whitespace();
        let rec = match format {
            DataFormat::Ethucy => {
                let frame_id = integral(field::<f64>(toks.next(), line, "frame_id")?, line, "frame_id")?;
                let ped_id = integral(field::<f64>(toks.next(), line, "ped_id")?, line, "ped_id")?;
                let x = field::<f64>(toks.next(), line, "x")?;
                let y = field::<f64>(toks.next(), line, "y")?;
                if let Some(extra) = toks.next() {
                    return Err(Error::Parse { line, message: format!("unexpected trailing field {extra:?}") });
                }
                TrackRecord { frame_id, ped_id, x, y }
            }
            DataFormat::Sdd => {
                let ped_id = field::<i64>(toks.next(), line, "track_id")?;
                let xmin = field::<f64>(toks.next(), line, "xmin")?;
                let ymin = field::<f64>(toks.next(), line, "ymin")?;
                let xmax = field::<f64>(toks.next(), line, "xmax")?;
                let ymax = field::<f64>(toks.next(), line, "ymax")?;
                let frame_id = field::<i64>(toks.next(), line, "frame")?;
                let lost = field::<i64>(toks.next(), line, "lost")?;
                let _occluded = field::<i64>(toks.next(), line, "occluded")?;
                let _generated = field::<i64>(toks.next(), line, "generated")?;
                let label = toks.next().ok_or_else(|| Error::Parse { line, message: "missing label".into() })?;
                if lost != 0 || label.trim_matches('"') != "Pedestrian" {
                    continue;
                }
                TrackRecord { frame_id, ped_id, x: 0.5 * (xmin + xmax), y: 0.5 * (ymin + ymax) }
            }
        };
        if !rec.x.is_finite() || !rec.y.is_finite() {
            return Err(Error::Parse { line, message: "non-finite coordinate".into() });
        }
        if !seen.insert((rec.frame_id, rec.ped_id)) {
            return Err(Error::DuplicateRecord { frame: rec.frame_id, ped: rec.ped_id });
        }
        out.push(rec);
    }
    out.sort_by_key(|r| (r.ped_id, r.frame_id));
    Ok(out)
}

fn integral(v: f64, line: usize, what: &str) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Parse { line, message: format!("{what} {v} is not an integer") });
    }
    Ok(v as i64)
}

/// Serializes records in the ETH/UCY text format, ordered by frame then pedestrian.
pub fn write_records(records: &[TrackRecord]) -> String {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.frame_id, r.ped_id));
    let mut s = String::new();
    for r in sorted {
        // `{:?}` on f64 prints the shortest string that round-trips exactly.
        writeln!(s, "{}\t{}\t{:?}\t{:?}", r.frame_id, r.ped_id, r.x, r.y).unwrap();
    }
    s
}

/// Keeps every `every`-th distinct frame.
pub fn downsample(records: &[TrackRecord], every: usize) -> Result<Vec<TrackRecord>> {
    if every == 0 {
        return Err(Error::Config("down-sampling factor must be positive".into()));
    }
    let frames: BTreeSet<i64> = records.iter().map(|r| r.frame_id).collect();
    let keep: BTreeSet<i64> = frames.into_iter().step_by(every).collect();
    Ok(records.iter().copied().filter(|r| keep.contains(&r.frame_id)).collect())
}

/// One fixed-length slice of a scene. Each pedestrian is present at every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneWindow {
    pub ped_ids: Vec<i64>,
    /// `n × t_obs` absolute positions.
    pub obs: Vec<Vec<Point>>,
    /// `n × t_pred` absolute positions.
    pub fut: Vec<Vec<Point>>,
    pub dt: f64,
}

impl SceneWindow {
    pub fn new(ped_ids: Vec<i64>, obs: Vec<Vec<Point>>, fut: Vec<Vec<Point>>, dt: f64) -> Result<Self> {
        let w = Self { ped_ids, obs, fut, dt };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ped_ids.len();
        if n == 0 {
            return Err(Error::Shape("window has no pedestrians".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.obs.len() != n || self.fut.len() != n {
            return Err(Error::Shape("obs/fut pedestrian count mismatch".into()));
        }
        let t_obs = self.obs[0].len();
        let t_pred = self.fut[0].len();
        if t_obs == 0 || t_pred == 0 {
            return Err(Error::Shape("empty observed or future span".into()));
        }
        if self.obs.iter().any(|o| o.len() != t_obs) || self.fut.iter().any(|f| f.len() != t_pred) {
            return Err(Error::Shape("ragged trajectories in window".into()));
        }
        Ok(())
    }

    pub fn n_peds(&self) -> usize {
        self.ped_ids.len()
    }

    pub fn t_obs(&self) -> usize {
        self.obs[0].len()
    }

    pub fn t_pred(&self) -> usize {
        self.fut[0].len()
    }

    pub fn last_obs(&self, ped: usize) -> Point {
        *self.obs[ped].last().unwrap()
    }

    /// Observed relative displacements, `t_obs` rows. The first row repeats
    /// the first available difference.
    pub fn obs_displacements(&self, ped: usize) -> Vec<Point> {
        padded_differences(&self.obs[ped], 1.0)
    }

    /// Translates every position by `offset`.
    pub fn shifted(&self, offset: Point) -> Self {
        let shift = |tracks: &Vec<Vec<Point>>| {
            tracks.iter().map(|t| t.iter().map(|p| [p[0] + offset[0], p[1] + offset[1]]).collect()).collect()
        };
        Self { ped_ids: self.ped_ids.clone(), obs: shift(&self.obs), fut: shift(&self.fut), dt: self.dt }
    }

    /// Records for every step of the window, with frames numbered from `first_frame`.
    pub fn to_records(&self, first_frame: i64, frame_step: i64) -> Vec<TrackRecord> {
        let mut out = Vec::new();
        for (i, &ped_id) in self.ped_ids.iter().enumerate() {
            for (t, p) in self.obs[i].iter().chain(&self.fut[i]).enumerate() {
                out.push(TrackRecord { frame_id: first_frame + t as i64 * frame_step, ped_id, x: p[0], y: p[1] });
            }
        }
        out
    }
}

/// Builds all windows of `t_obs + t_pred` consecutive frames (consecutive in
/// the sorted set of distinct frame ids), keeping the pedestrians present at
/// every frame of the window.
pub fn build_windows(
    records: &[TrackRecord],
    t_obs: usize,
    t_pred: usize,
    stride: usize,
    dt: f64,
) -> Result<Vec<SceneWindow>> {
    if t_obs == 0 || t_pred == 0 {
        return Err(Error::Config(format!("t_obs and t_pred must be positive (got {t_obs}, {t_pred})")));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let len = t_obs + t_pred;
    let frames: Vec<i64> = records.iter().map(|r| r.frame_id).collect::<BTreeSet<_>>().into_iter().collect();
    let frame_index: HashMap<i64, usize> = frames.iter().enumerate().map(|(i, &f)| (f, i)).collect();

    // ped -> positions by frame index
    let mut tracks: BTreeMap<i64, BTreeMap<usize, Point>> = BTreeMap::new();
    for r in records {
        tracks.entry(r.ped_id).or_default().insert(frame_index[&r.frame_id], [r.x, r.y]);
    }

    let mut windows = Vec::new();
    if frames.len() < len {
        return Ok(windows);
    }
    for start in (0..=frames.len() - len).step_by(stride) {
        let mut ped_ids = Vec::new();
        let mut obs = Vec::new();
        let mut fut = Vec::new();
        for (&ped, track) in &tracks {
            let steps: Option<Vec<Point>> = (start..start + len).map(|f| track.get(&f).copied()).collect();
            if let Some(steps) = steps {
                ped_ids.push(ped);
                obs.push(steps[..t_obs].to_vec());
                fut.push(steps[t_obs..].to_vec());
            }
        }
        if !ped_ids.is_empty() {
            windows.push(SceneWindow { ped_ids, obs, fut, dt });
        }
    }
    Ok(windows)
}

/// Number of distinct pedestrians that appear in at least one window.
pub fn count_trajectories(windows: &[SceneWindow]) -> usize {
    windows.iter().flat_map(|w| w.ped_ids.iter().copied()).collect::<BTreeSet<_>>().len()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Span {
    Obs,
    Fut,
}

/// Per-pedestrian position, velocity and acceleration sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChannels {
    pub positions: Vec<Vec<Point>>,
    pub velocities: Vec<Vec<Point>>,
    pub accelerations: Vec<Vec<Point>>,
}

impl KinematicChannels {
    pub fn channel(&self, k: usize) -> &Vec<Vec<Point>> {
        match k {
            0 => &self.positions,
            1 => &self.velocities,
            2 => &self.accelerations,
            _ => panic!("kinematic channel index {k} out of range"),
        }
    }
}

/// `out[t] = (xs[t] - xs[t-1]) / dt`, with `out[0] = out[1]`.
fn padded_differences(xs: &[Point], dt: f64) -> Vec<Point> {
    if xs.len() < 2 {
        return vec![[0.0, 0.0]; xs.len()];
    }
    let mut out = Vec::with_capacity(xs.len());
    out.push([0.0, 0.0]);
    for t in 1..xs.len() {
        out.push([(xs[t][0] - xs[t - 1][0]) / dt, (xs[t][1] - xs[t - 1][1]) / dt]);
    }
    out[0] = out[1];
    out
}

/// Finite-difference kinematics over one span of the window.
pub fn kinematics(window: &SceneWindow, span: Span) -> KinematicChannels {
    let positions = match span {
        Span::Obs => window.obs.clone(),
        Span::Fut => window.fut.clone(),
    };
    let velocities: Vec<_> = positions.iter().map(|p| padded_differences(p, window.dt)).collect();
    let accelerations = velocities.iter().map(|v| padded_differences(v, window.dt)).collect();
    KinematicChannels { positions, velocities, accelerations }
}

/// Leave-one-out split over ETH/UCY scene names.
pub fn leave_one_out_split(scene_names: &[String], held_out: &str) -> Result<(Vec<String>, Vec<String>)> {
    if !scene_names.iter().any(|s| s == held_out) {
        return Err(Error::Config(format!("held-out scene {held_out:?} not among {scene_names:?}")));
    }
    let train = scene_names.iter().filter(|s| *s != held_out).cloned().collect();
    Ok((train, vec![held_out.to_string()]))
}

/// Fixed SDD video split: the videos listed in [`SDD_TEST_VIDEOS`] are test,
/// the rest are train.
pub fn sdd_split(video_names: &[String]) -> (Vec<String>, Vec<String>) {
    video_names.iter().cloned().partition(|v| !SDD_TEST_VIDEOS.contains(&v.as_str()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Linear,
    Turn,
    Crossing,
    Still,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "turn" => Ok(Self::Turn),
            "crossing" => Ok(Self::Crossing),
            "still" => Ok(Self::Still),
            other => Err(Error::Config(format!("unknown synthetic scenario {other:?}"))),
        }
    }
}

/// Steps (1-based) before which the turn scenario keeps its initial heading.
pub const TURN_STEP: usize = 10;

/// Generates `n_windows` independent 20-step windows of `n_ped` pedestrians
/// at 2.5 Hz.
///
/// * `Linear`: constant velocity.
/// * `Turn`: constant speed; the displacement into step 10 and every later one
///   is rotated by 90°, left or right per pedestrian.
/// * `Crossing`: two groups on perpendicular paths that intersect. The first
///   group keeps its velocity; the second slows down over the future span by a
///   factor that depends on the first group's speed, so its future is only
///   predictable from the other group's motion.
/// * `Still`: zero displacement.
pub fn generate_synthetic(kind: SyntheticKind, n_ped: usize, n_windows: usize, seed: u64) -> Result<Vec<SceneWindow>> {
    if n_ped == 0 {
        return Err(Error::Config("n_ped must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = T_OBS + T_PRED;
    let mut windows = Vec::with_capacity(n_windows);
    for _ in 0..n_windows {
        let tracks: Vec<Vec<Point>> = match kind {
            SyntheticKind::Linear => (0..n_ped)
                .map(|_| {
                    let start = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                    let step = random_step(&mut rng);
                    (0..len).map(|t| [start[0] + t as f64 * step[0], start[1] + t as f64 * step[1]]).collect()
                })
                .collect(),
            SyntheticKind::Turn => (0..n_ped)
                .map(|_| {
                    let start = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                    let step = random_step(&mut rng);
                    let turned = if rng.random_bool(0.5) { [-step[1], step[0]] } else { [step[1], -step[0]] };
                    let mut p = start;
                    let mut track = vec![p];
                    for s in 2..=len {
                        let d = if s < TURN_STEP { step } else { turned };
                        p = [p[0] + d[0], p[1] + d[1]];
                        track.push(p);
                    }
                    track
                })
                .collect(),
            SyntheticKind::Crossing => crossing_tracks(n_ped, &mut rng),
            SyntheticKind::Still => (0..n_ped)
                .map(|_| {
                    let p = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                    vec![p; len]
                })
                .collect(),
        };
        let ped_ids = (0..n_ped as i64).collect();
        let obs = tracks.iter().map(|t| t[..T_OBS].to_vec()).collect();
        let fut = tracks.iter().map(|t| t[T_OBS..].to_vec()).collect();
        windows.push(SceneWindow { ped_ids, obs, fut, dt: ETHUCY_DT });
    }
    Ok(windows)
}

fn random_step(rng: &mut impl Rng) -> Point {
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(0.3..0.6);
    [speed * heading.cos(), speed * heading.sin()]
}

fn crossing_tracks(n_ped: usize, rng: &mut impl Rng) -> Vec<Vec<Point>> {
    let len = T_OBS + T_PRED;
    let n_a = n_ped.div_ceil(2);
    // Group A walks along +x, group B along +y; both reach the origin region
    // around step 12.
    let speed_a = rng.random_range(0.2..0.6);
    let speed_b = rng.random_range(0.3..0.5);
    let slow = 1.4 - 2.0 * speed_a;
    let mut tracks = Vec::with_capacity(n_ped);
    for k in 0..n_ped {
        let lateral = rng.random_range(-0.8..0.8);
        let lead = rng.random_range(-0.5..0.5);
        let mut track = Vec::with_capacity(len);
        if k < n_a {
            let start = [-12.0 * speed_a + lead, lateral];
            for t in 0..len {
                track.push([start[0] + t as f64 * speed_a, start[1]]);
            }
        } else {
            let mut p = [lateral, -12.0 * speed_b + lead - 1.5];
            track.push(p);
            for t in 1..len {
                let v = if t < T_OBS { speed_b } else { speed_b * slow };
                p = [p[0], p[1] + v];
                track.push(p);
            }
        }
        tracks.push(track);
    }
    tracks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_track(frames: usize, ped: i64, offset: i64) -> Vec<TrackRecord> {
        (0..frames as i64)
            .map(|f| TrackRecord { frame_id: (f + offset) * 10, ped_id: ped, x: f as f64 * 0.5, y: 0.0 })
            .collect()
    }

    #[test]
    fn parse_empty_and_well_formed() {
        assert!(parse_records("", DataFormat::Ethucy).unwrap().is_empty());
        let recs = parse_records("0 1 0.0 0.0\n10 1 0.5 0.0\n\n20\t1\t1.0\t0.0\n", DataFormat::Ethucy).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.ped_id == 1));
        assert_eq!(recs[2], TrackRecord { frame_id: 20, ped_id: 1, x: 1.0, y: 0.0 });
    }

    #[test]
    fn parse_rejects_bad_lines() {
        match parse_records("0 1 0 0\n10 1 abc 0\n", DataFormat::Ethucy) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_records("0 1 0 0\n0 1 1 1\n", DataFormat::Ethucy) {
            Err(Error::DuplicateRecord { frame: 0, ped: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_records("0 1 0\n", DataFormat::Ethucy).is_err());
        assert!(parse_records("0.5 1 0 0\n", DataFormat::Ethucy).is_err());
    }

    #[test]
    fn parse_sdd_reduces_boxes_to_centers() {
        let text = "3 10 20 30 60 100 0 0 0 \"Pedestrian\"\n\
                    3 12 20 32 60 112 1 0 0 \"Pedestrian\"\n\
                    4 0 0 2 2 100 0 0 0 \"Biker\"\n";
        let recs = parse_records(text, DataFormat::Sdd).unwrap();
        assert_eq!(recs, vec![TrackRecord { frame_id: 100, ped_id: 3, x: 20.0, y: 40.0 }]);
    }

    #[test]
    fn window_counts() {
        assert_eq!(build_windows(&single_track(25, 1, 0), 8, 12, 1, 0.4).unwrap().len(), 6);
        assert!(build_windows(&single_track(19, 1, 0), 8, 12, 1, 0.4).unwrap().is_empty());
        assert!(build_windows(&single_track(25, 1, 0), 0, 12, 1, 0.4).is_err());
        assert!(build_windows(&single_track(25, 1, 0), 8, 0, 1, 0.4).is_err());
    }

    #[test]
    fn window_keeps_only_continuously_present_peds() {
        let mut recs = single_track(20, 1, 0);
        recs.extend(single_track(20, 2, 0));
        recs.extend(single_track(20, 3, 5));
        let windows = build_windows(&recs, 8, 12, 1, 0.4).unwrap();
        assert_eq!(windows[0].ped_ids, vec![1, 2]);
        assert_eq!(windows.last().unwrap().ped_ids, vec![3]);
        // offsets 1..=4 have nobody present for all 20 frames
        assert_eq!(windows.len(), 2);
    }

    #[test]
    fn kinematics_examples() {
        let still = SceneWindow::new(vec![0], vec![vec![[1.0, 2.0]; 8]], vec![vec![[1.0, 2.0]; 12]], 0.4).unwrap();
        let k = kinematics(&still, Span::Obs);
        assert!(k.velocities[0].iter().chain(&k.accelerations[0]).all(|v| *v == [0.0, 0.0]));

        let line: Vec<Point> = (0..8).map(|t| [t as f64 * 0.4, 0.0]).collect();
        let fut: Vec<Point> = (8..20).map(|t| [t as f64 * 0.4, 0.0]).collect();
        let w = SceneWindow::new(vec![0], vec![line], vec![fut], 0.4).unwrap();
        for span in [Span::Obs, Span::Fut] {
            let k = kinematics(&w, span);
            for (v, a) in k.velocities[0].iter().zip(&k.accelerations[0]) {
                assert!((v[0] - 1.0).abs() < 1e-12 && v[1] == 0.0);
                assert!(a[0].abs() < 1e-9 && a[1] == 0.0);
            }
        }

        let sq: Vec<Point> = (0..5).map(|t| [(t * t) as f64, 0.0]).collect();
        let w = SceneWindow::new(vec![0], vec![sq], vec![vec![[0.0, 0.0]]], 1.0).unwrap();
        let k = kinematics(&w, Span::Obs);
        let vx: Vec<f64> = k.velocities[0].iter().map(|v| v[0]).collect();
        let ax: Vec<f64> = k.accelerations[0].iter().map(|a| a[0]).collect();
        assert_eq!(vx, vec![1.0, 1.0, 3.0, 5.0, 7.0]);
        assert_eq!(ax, vec![0.0, 0.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn leave_one_out() {
        let names: Vec<String> = ETHUCY_SCENES.iter().map(|s| s.to_string()).collect();
        let (train, test) = leave_one_out_split(&names, "ETH").unwrap();
        assert_eq!(train, vec!["HOTEL", "UNIV", "ZARA1", "ZARA2"]);
        assert_eq!(test, vec!["ETH"]);
        let (train, _) = leave_one_out_split(&names, "ZARA2").unwrap();
        assert!(!train.contains(&"ZARA2".to_string()));
        assert!(matches!(leave_one_out_split(&names, "MARS"), Err(Error::Config(_))));
    }

    #[test]
    fn sdd_split_sizes() {
        let mut videos: Vec<String> = SDD_TEST_VIDEOS.iter().map(|s| s.to_string()).collect();
        videos.extend((0..31).map(|i| format!("train_video_{i}")));
        let (train, test) = sdd_split(&videos);
        assert_eq!((train.len(), test.len()), (31, 17));
    }

    #[test]
    fn synthetic_scenarios() {
        let lin = generate_synthetic(SyntheticKind::Linear, 1, 3, 7).unwrap();
        for w in &lin {
            let d = w.obs_displacements(0)[7];
            let last = w.last_obs(0);
            for (k, p) in w.fut[0].iter().enumerate() {
                let s = (k + 1) as f64;
                assert!((p[0] - (last[0] + s * d[0])).abs() < 1e-9);
                assert!((p[1] - (last[1] + s * d[1])).abs() < 1e-9);
            }
        }
        let still = generate_synthetic(SyntheticKind::Still, 3, 2, 1).unwrap();
        for w in &still {
            for i in 0..3 {
                assert!(w.obs[i].iter().chain(&w.fut[i]).all(|p| *p == w.obs[i][0]));
            }
        }
        let turn = generate_synthetic(SyntheticKind::Turn, 1, 4, 3).unwrap();
        for w in &turn {
            let all: Vec<Point> = w.obs[0].iter().chain(&w.fut[0]).copied().collect();
            // heading into step s (1-based) is all[s-1] - all[s-2]
            let h8 = [all[7][0] - all[6][0], all[7][1] - all[6][1]];
            let h12 = [all[11][0] - all[10][0], all[11][1] - all[10][1]];
            assert!((h8[0] * h12[0] + h8[1] * h12[1]).abs() < 1e-12);
        }
        assert_eq!(generate_synthetic(SyntheticKind::Crossing, 4, 2, 5).unwrap(), generate_synthetic(SyntheticKind::Crossing, 4, 2, 5).unwrap());
        assert!(generate_synthetic(SyntheticKind::Linear, 0, 1, 0).is_err());
    }

    #[test]
    fn records_round_trip_through_text() {
        let windows = generate_synthetic(SyntheticKind::Crossing, 3, 1, 11).unwrap();
        let recs = windows[0].to_records(0, 10);
        let text = write_records(&recs);
        let parsed = parse_records(&text, DataFormat::Ethucy).unwrap();
        let rebuilt = build_windows(&parsed, 8, 12, 1, ETHUCY_DT).unwrap();
        assert_eq!(rebuilt, windows);
    }

    #[test]
    fn downsample_keeps_every_kth_frame() {
        let recs = single_track(10, 1, 0);
        let ds = downsample(&recs, 3).unwrap();
        let frames: Vec<i64> = ds.iter().map(|r| r.frame_id).collect();
        assert_eq!(frames, vec![0, 30, 60, 90]);
        assert!(downsample(&recs, 0).is_err());
    }
}

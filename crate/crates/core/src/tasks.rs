//! Task families: trial generators with stimulus, delay and response periods.
//!
//! Channel layout: inputs are `[stimulus.., context?, fixation]`, targets are
//! `[response.., fixation]`. The fixation channel is always last.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::objective::LossKind;
use crate::seed::{self, Stream};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskFamily {
    Dms,
    CdDms,
    GngDr2,
    GngDr4,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 4] = [TaskFamily::Dms, TaskFamily::CdDms, TaskFamily::GngDr2, TaskFamily::GngDr4];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::Dms => "DMS",
            TaskFamily::CdDms => "CD-DMS",
            TaskFamily::GngDr2 => "GNG-DR-2",
            TaskFamily::GngDr4 => "GNG-DR-4",
        }
    }

    fn code(self) -> u64 {
        match self {
            TaskFamily::Dms => 0,
            TaskFamily::CdDms => 1,
            TaskFamily::GngDr2 => 2,
            TaskFamily::GngDr4 => 3,
        }
    }

    pub fn spec(self) -> TaskFamilySpec {
        TaskFamilySpec::for_family(self)
    }

    /// Default convergence threshold on the total training loss.
    pub fn default_threshold(self) -> f64 {
        match self {
            TaskFamily::GngDr4 => 0.006,
            _ => 0.005,
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.trim().to_ascii_uppercase().replace('_', "-");
        match norm.as_str() {
            "DMS" => Ok(TaskFamily::Dms),
            "CD-DMS" | "CDDMS" => Ok(TaskFamily::CdDms),
            "GNG-DR-2" | "GNGDR2" => Ok(TaskFamily::GngDr2),
            "GNG-DR-4" | "GNGDR4" => Ok(TaskFamily::GngDr4),
            _ => Err(Error::UnknownFamily(s.to_string())),
        }
    }
}

impl Serialize for TaskFamily {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TaskFamily {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Channel counts and trial structure of one family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskFamilySpec {
    pub family: TaskFamily,
    pub stimulus_dim: usize,
    pub context_dim: usize,
    pub response_dim: usize,
    pub loss: LossKind,
    pub trials_per_task: usize,
}

impl TaskFamilySpec {
    pub fn for_family(family: TaskFamily) -> Self {
        let (stimulus_dim, context_dim, response_dim, loss, trials) = match family {
            TaskFamily::Dms => (10, 0, 2, LossKind::Ce, 2),
            TaskFamily::CdDms => (10, 1, 2, LossKind::Ce, 4),
            TaskFamily::GngDr2 => (2, 0, 2, LossKind::Mse, 2),
            TaskFamily::GngDr4 => (4, 0, 4, LossKind::Mse, 2),
        };
        Self {
            family,
            stimulus_dim,
            context_dim,
            response_dim,
            loss,
            trials_per_task: trials,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.stimulus_dim + self.context_dim + 1
    }

    pub fn output_dim(&self) -> usize {
        self.response_dim + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSchedule {
    pub stimulus_steps: usize,
    pub delay_steps: usize,
    pub response_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Period {
    Stimulus,
    Delay,
    Response,
}

impl PeriodSchedule {
    pub const STIMULUS_MS: f64 = 500.0;
    pub const DELAY_MS: f64 = 1000.0;
    pub const RESPONSE_MS: f64 = 500.0;

    pub fn new(stimulus_steps: usize, delay_steps: usize, response_steps: usize) -> Result<Self> {
        if stimulus_steps == 0 || delay_steps == 0 || response_steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "every period needs at least one step, got {stimulus_steps}/{delay_steps}/{response_steps}"
            )));
        }
        Ok(Self {
            stimulus_steps,
            delay_steps,
            response_steps,
        })
    }

    /// 500/1000/500 ms at the given step size, rounded to whole steps.
    pub fn from_dt(dt_ms: f64) -> Result<Self> {
        if !(dt_ms > 0.0 && dt_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt_ms}")));
        }
        let steps = |ms: f64| (ms / dt_ms).round() as usize;
        Self::new(steps(Self::STIMULUS_MS), steps(Self::DELAY_MS), steps(Self::RESPONSE_MS))
    }

    pub fn total(&self) -> usize {
        self.stimulus_steps + self.delay_steps + self.response_steps
    }

    pub fn response_start(&self) -> usize {
        self.stimulus_steps + self.delay_steps
    }

    pub fn stimulus_range(&self) -> Range<usize> {
        0..self.stimulus_steps
    }

    pub fn delay_range(&self) -> Range<usize> {
        self.stimulus_steps..self.response_start()
    }

    pub fn response_range(&self) -> Range<usize> {
        self.response_start()..self.total()
    }

    pub fn period_of(&self, t: usize) -> Option<Period> {
        if t < self.stimulus_steps {
            Some(Period::Stimulus)
        } else if t < self.response_start() {
            Some(Period::Delay)
        } else if t < self.total() {
            Some(Period::Response)
        } else {
            None
        }
    }

    pub fn mask(&self, period: Period) -> Vec<bool> {
        (0..self.total()).map(|t| self.period_of(t) == Some(period)).collect()
    }
}

impl Default for PeriodSchedule {
    fn default() -> Self {
        Self::from_dt(10.0).expect("default schedule")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub input: Matrix,
    pub target: Matrix,
    /// Class index for choice tasks, prototype index for repeat tasks.
    pub label: usize,
    /// Context cue (CD-DMS only).
    pub cue: Option<u8>,
    /// Go trial flag (repeat tasks only).
    pub go: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub family: TaskFamily,
    pub task_index: u64,
    pub seed: u64,
    pub schedule: PeriodSchedule,
    pub trials: Vec<Trial>,
}

impl TaskInstance {
    pub fn spec(&self) -> TaskFamilySpec {
        self.family.spec()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.set_meta("kind", "task")?;
        c.set_meta("family", self.family.as_str())?;
        c.set_meta("task_index", self.task_index)?;
        c.set_meta("seed", self.seed)?;
        c.set_meta("stimulus_steps", self.schedule.stimulus_steps)?;
        c.set_meta("delay_steps", self.schedule.delay_steps)?;
        c.set_meta("response_steps", self.schedule.response_steps)?;
        c.set_meta("n_trials", self.trials.len())?;
        for (i, tr) in self.trials.iter().enumerate() {
            c.set_meta(&format!("trial{i}.label"), tr.label)?;
            if let Some(cue) = tr.cue {
                c.set_meta(&format!("trial{i}.cue"), cue)?;
            }
            if let Some(go) = tr.go {
                c.set_meta(&format!("trial{i}.go"), go)?;
            }
            c.push_matrix(&format!("trial{i}.input"), &tr.input)?;
            c.push_matrix(&format!("trial{i}.target"), &tr.target)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let family: TaskFamily = c.require_meta("family")?.parse()?;
        let schedule = PeriodSchedule::new(
            c.meta_parse("stimulus_steps")?,
            c.meta_parse("delay_steps")?,
            c.meta_parse("response_steps")?,
        )?;
        let n: usize = c.meta_parse("n_trials")?;
        let mut trials = Vec::with_capacity(n);
        for i in 0..n {
            let cue = match c.meta(&format!("trial{i}.cue")) {
                Some(_) => Some(c.meta_parse(&format!("trial{i}.cue"))?),
                None => None,
            };
            let go = match c.meta(&format!("trial{i}.go")) {
                Some(_) => Some(c.meta_parse(&format!("trial{i}.go"))?),
                None => None,
            };
            trials.push(Trial {
                input: c.matrix(&format!("trial{i}.input"))?,
                target: c.matrix(&format!("trial{i}.target"))?,
                label: c.meta_parse(&format!("trial{i}.label"))?,
                cue,
                go,
            });
        }
        Ok(Self {
            family,
            task_index: c.meta_parse("task_index")?,
            seed: c.meta_parse("seed")?,
            schedule,
            trials,
        })
    }
}

/// Deterministic i.i.d. uniform(0, 1) stimulus vector.
pub fn stimulus_sampler(family: TaskFamily, task_index: u64, prototype: u64, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed, Stream::Stimulus, &[family.code(), task_index, prototype]);
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

fn fill_rows(m: &mut Matrix, rows: Range<usize>, col: usize, value: f64) {
    for t in rows {
        m.set(t, col, value);
    }
}

/// Input with the stimulus (and optional context) in the stimulus period and
/// fixation through stimulus and delay.
fn build_input(spec: &TaskFamilySpec, schedule: &PeriodSchedule, stimulus: &[f64], cue: Option<u8>) -> Matrix {
    let mut x = Matrix::zeros(schedule.total(), spec.input_dim());
    for t in schedule.stimulus_range() {
        x.row_mut(t)[..spec.stimulus_dim].copy_from_slice(stimulus);
    }
    if let Some(c) = cue {
        fill_rows(&mut x, schedule.stimulus_range(), spec.stimulus_dim, f64::from(c));
    }
    fill_rows(&mut x, 0..schedule.response_start(), spec.input_dim() - 1, 1.0);
    x
}

fn build_target(spec: &TaskFamilySpec, schedule: &PeriodSchedule, response: &[f64]) -> Matrix {
    let mut y = Matrix::zeros(schedule.total(), spec.output_dim());
    fill_rows(&mut y, 0..schedule.response_start(), spec.output_dim() - 1, 1.0);
    for t in schedule.response_range() {
        y.row_mut(t)[..spec.response_dim].copy_from_slice(response);
    }
    y
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
}

fn check_family(spec: &TaskFamilySpec, allowed: &[TaskFamily]) -> Result<()> {
    if allowed.contains(&spec.family) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("generator does not handle {}", spec.family)))
    }
}

/// Two trials, one per prototype; the label is the prototype index.
pub fn gen_dms(task_index: u64, spec: &TaskFamilySpec, schedule: &PeriodSchedule, seed: u64) -> Result<TaskInstance> {
    check_family(spec, &[TaskFamily::Dms])?;
    let trials = (0..2)
        .map(|p| {
            let stim = stimulus_sampler(spec.family, task_index, p as u64, seed, spec.stimulus_dim);
            Trial {
                input: build_input(spec, schedule, &stim, None),
                target: build_target(spec, schedule, &one_hot(p, spec.response_dim)),
                label: p,
                cue: None,
                go: None,
            }
        })
        .collect();
    Ok(TaskInstance {
        family: spec.family,
        task_index,
        seed,
        schedule: *schedule,
        trials,
    })
}

/// Four trials: both prototypes under both cues; cue 1 swaps the labels.
pub fn gen_cddms(task_index: u64, spec: &TaskFamilySpec, schedule: &PeriodSchedule, seed: u64) -> Result<TaskInstance> {
    check_family(spec, &[TaskFamily::CdDms])?;
    let mut trials = Vec::with_capacity(4);
    for cue in 0..2u8 {
        for p in 0..2usize {
            let stim = stimulus_sampler(spec.family, task_index, p as u64, seed, spec.stimulus_dim);
            let label = p ^ cue as usize;
            trials.push(Trial {
                input: build_input(spec, schedule, &stim, Some(cue)),
                target: build_target(spec, schedule, &one_hot(label, spec.response_dim)),
                label,
                cue: Some(cue),
                go: None,
            });
        }
    }
    Ok(TaskInstance {
        family: spec.family,
        task_index,
        seed,
        schedule: *schedule,
        trials,
    })
}

/// Two trials: prototype 0 is go (reproduce the stimulus), prototype 1 is
/// no-go (output zero).
pub fn gen_gngdr(task_index: u64, spec: &TaskFamilySpec, schedule: &PeriodSchedule, seed: u64) -> Result<TaskInstance> {
    check_family(spec, &[TaskFamily::GngDr2, TaskFamily::GngDr4])?;
    let trials = (0..2)
        .map(|p| {
            let stim = stimulus_sampler(spec.family, task_index, p as u64, seed, spec.stimulus_dim);
            let go = p == 0;
            let response = if go { stim.clone() } else { vec![0.0; spec.response_dim] };
            Trial {
                input: build_input(spec, schedule, &stim, None),
                target: build_target(spec, schedule, &response),
                label: p,
                cue: None,
                go: Some(go),
            }
        })
        .collect();
    Ok(TaskInstance {
        family: spec.family,
        task_index,
        seed,
        schedule: *schedule,
        trials,
    })
}

pub fn generate(family: TaskFamily, task_index: u64, schedule: &PeriodSchedule, seed: u64) -> Result<TaskInstance> {
    let spec = family.spec();
    match family {
        TaskFamily::Dms => gen_dms(task_index, &spec, schedule, seed),
        TaskFamily::CdDms => gen_cddms(task_index, &spec, schedule, seed),
        TaskFamily::GngDr2 | TaskFamily::GngDr4 => gen_gngdr(task_index, &spec, schedule, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched() -> PeriodSchedule {
        PeriodSchedule::from_dt(10.0).unwrap()
    }

    #[test]
    fn schedule_at_10ms() {
        let s = sched();
        assert_eq!((s.stimulus_steps, s.delay_steps, s.response_steps), (50, 100, 50));
        assert_eq!(s.total(), 200);
        assert_eq!(s.response_range(), 150..200);
        let s20 = PeriodSchedule::from_dt(20.0).unwrap();
        assert_eq!(s20.total(), 100);
        assert!(PeriodSchedule::new(0, 1, 1).is_err());
        assert!(PeriodSchedule::from_dt(0.0).is_err());
    }

    #[test]
    fn period_masks_tile_the_trial() {
        let s = PeriodSchedule::new(3, 5, 2).unwrap();
        let masks = [Period::Stimulus, Period::Delay, Period::Response].map(|p| s.mask(p));
        for t in 0..s.total() {
            assert_eq!(masks.iter().filter(|m| m[t]).count(), 1);
        }
        assert_eq!(s.period_of(10), None);
    }

    #[test]
    fn shapes_for_every_family() {
        let expected = [
            (TaskFamily::Dms, 11, 3, 2),
            (TaskFamily::CdDms, 12, 3, 4),
            (TaskFamily::GngDr2, 3, 3, 2),
            (TaskFamily::GngDr4, 5, 5, 2),
        ];
        for (f, din, dout, n) in expected {
            let task = generate(f, 7, &sched(), 1).unwrap();
            assert_eq!(task.trials.len(), n, "{f}");
            for tr in &task.trials {
                assert_eq!(tr.input.shape(), (200, din), "{f}");
                assert_eq!(tr.target.shape(), (200, dout), "{f}");
            }
            assert_eq!(f.spec().input_dim(), din);
            assert_eq!(f.spec().output_dim(), dout);
        }
    }

    #[test]
    fn fixation_channels() {
        for f in TaskFamily::ALL {
            let task = generate(f, 3, &sched(), 9).unwrap();
            for tr in &task.trials {
                let (fi, fo) = (tr.input.cols() - 1, tr.target.cols() - 1);
                for t in 0..200 {
                    let on = if t < 150 { 1.0 } else { 0.0 };
                    assert_eq!(tr.input.get(t, fi), on);
                    assert_eq!(tr.target.get(t, fo), on);
                }
            }
        }
    }

    #[test]
    fn dms_inputs_and_labels() {
        let task = generate(TaskFamily::Dms, 0, &sched(), 5).unwrap();
        assert_eq!(task.trials[0].label, 0);
        assert_eq!(task.trials[1].label, 1);
        let tr = &task.trials[1];
        for t in 0..200 {
            let stim = &tr.input.row(t)[..10];
            if t < 50 {
                assert_eq!(stim, &tr.input.row(0)[..10]);
                assert!(stim.iter().all(|v| (0.0..=1.0).contains(v)));
            } else {
                assert!(stim.iter().all(|&v| v == 0.0));
            }
            let resp = &tr.target.row(t)[..2];
            assert_eq!(resp, if t >= 150 { &[0.0, 1.0][..] } else { &[0.0, 0.0][..] });
        }
        assert_ne!(task.trials[0].input.row(0), task.trials[1].input.row(0));
    }

    #[test]
    fn cddms_cue_reverses_mapping() {
        let task = generate(TaskFamily::CdDms, 2, &sched(), 5).unwrap();
        for p in 0..2 {
            let (a, b) = (&task.trials[p], &task.trials[2 + p]);
            assert_eq!(a.cue, Some(0));
            assert_eq!(b.cue, Some(1));
            assert_eq!(a.input.row(0)[..10], b.input.row(0)[..10]);
            for t in 0..200 {
                let (ra, rb) = (&a.target.row(t)[..2], &b.target.row(t)[..2]);
                assert_eq!(ra[0], rb[1]);
                assert_eq!(ra[1], rb[0]);
                let ctx = if t < 50 { 1.0 } else { 0.0 };
                assert_eq!(b.input.get(t, 10), ctx);
                assert_eq!(a.input.get(t, 10), 0.0);
            }
        }
    }

    #[test]
    fn gng_targets() {
        for f in [TaskFamily::GngDr2, TaskFamily::GngDr4] {
            let task = generate(f, 11, &sched(), 4).unwrap();
            let dim = f.spec().stimulus_dim;
            let go = &task.trials[0];
            let nogo = &task.trials[1];
            assert_eq!(go.go, Some(true));
            assert_eq!(nogo.go, Some(false));
            for t in 150..200 {
                assert_eq!(go.target.row(t)[..dim], go.input.row(0)[..dim]);
                assert!(nogo.target.row(t)[..dim].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn wrong_generator_is_rejected() {
        let spec = TaskFamily::Dms.spec();
        assert!(gen_gngdr(0, &spec, &sched(), 0).is_err());
        assert!(gen_cddms(0, &spec, &sched(), 0).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in TaskFamily::ALL {
            assert_eq!(f.as_str().parse::<TaskFamily>().unwrap(), f);
        }
        assert_eq!("gng_dr_2".parse::<TaskFamily>().unwrap(), TaskFamily::GngDr2);
        assert!(matches!("XOR".parse::<TaskFamily>(), Err(Error::UnknownFamily(_))));
        assert_eq!(TaskFamily::GngDr4.default_threshold(), 0.006);
    }

    #[test]
    fn container_round_trip() {
        let task = generate(TaskFamily::CdDms, 4, &PeriodSchedule::new(2, 3, 2).unwrap(), 8).unwrap();
        let bytes = task.to_container().unwrap().to_bytes();
        let back = TaskInstance::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, task);
    }

    proptest! {
        #[test]
        fn sampler_is_deterministic_and_bounded(task in 0u64..10_000, seed in any::<u64>(), dim in 1usize..16) {
            let a = stimulus_sampler(TaskFamily::Dms, task, 0, seed, dim);
            prop_assert_eq!(&a, &stimulus_sampler(TaskFamily::Dms, task, 0, seed, dim));
            prop_assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
            prop_assert_ne!(a, stimulus_sampler(TaskFamily::Dms, task + 1, 0, seed, dim));
        }
    }
}

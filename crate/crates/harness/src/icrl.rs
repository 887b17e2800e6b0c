//! The episode loop: plan, select, lower, validate, reward; then evaluate the
//! episode, derive a critique and rewrite the planner prompt.

use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::kb::KnowledgeBase;
use crate::lowering::lower_plan;
use crate::planner::{plan, update_params, PlanContext, PlannerParams, Proposal};
use crate::reward::{reward, RewardContext};
use crate::select::select_index;
use crate::transport::{Message, Purpose, Transport};
use crate::validate::{validate, Feedback, TaskEnv};

/// Triples of the buffer passed to the evaluation step.
pub const CONTEXT_TRIPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcrlConfig {
    pub episodes: usize,
    pub steps: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for IcrlConfig {
    fn default() -> Self {
        Self {
            episodes: 3,
            steps: 2,
            temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum IcrlError {
    #[error("episodes and steps must both be at least 1")]
    Empty,
    #[error("writing trajectory log: {0}")]
    Log(#[from] std::io::Error),
}

/// One `(state, action, reward)` entry of an episode buffer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Triple {
    pub state: String,
    pub action: Option<Proposal>,
    pub reward: f64,
    /// Validation summary of the lowered candidate, or why there was none.
    pub outcome: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Episode {
    pub buffer: Vec<Triple>,
    pub evaluation: Option<String>,
    pub gradient: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub baseline_cost: f64,
    pub episodes: Vec<Episode>,
}

impl RewardContext for Trajectory {
    fn baseline_cost(&self) -> f64 {
        self.baseline_cost
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Best {
    pub source: String,
    pub reward: f64,
    pub episode: usize,
    pub step: usize,
    pub feedback: Feedback,
}

#[derive(Debug, Clone)]
pub struct IcrlOutcome {
    pub best: Option<Best>,
    pub trajectory: Trajectory,
    pub params: PlannerParams,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "lowercase")]
enum Record<'a> {
    Start {
        task: &'a str,
        baseline_cost: f64,
        episodes: usize,
        steps: usize,
        temperature: f64,
        seed: u64,
        theta_version: usize,
    },
    Step {
        episode: usize,
        step: usize,
        theta_version: usize,
        proposals: &'a [Proposal],
        #[serde(skip_serializing_if = "Option::is_none")]
        plan_error: Option<String>,
        action: Option<&'a Proposal>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lower_error: Option<String>,
        candidate: Option<&'a str>,
        feedback: Option<&'a Feedback>,
        reward: f64,
        accepted: bool,
        best_reward: Option<f64>,
    },
    Episode {
        episode: usize,
        evaluation: Option<&'a str>,
        gradient: Option<&'a str>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        theta_version: usize,
        theta: &'a str,
    },
    End {
        best_reward: Option<f64>,
        best_episode: Option<usize>,
        best_step: Option<usize>,
    },
}

fn emit(out: &mut dyn Write, r: &Record<'_>) -> std::io::Result<()> {
    let line = serde_json::to_string(r).expect("records serialize");
    writeln!(out, "{line}")
}

#[derive(Serialize)]
struct WindowEntry<'a> {
    step: usize,
    action: Option<&'a Proposal>,
    reward: f64,
    outcome: &'a str,
}

fn evaluate_episode(
    buffer: &[Triple],
    params: &PlannerParams,
    transport: &mut dyn Transport,
) -> Result<(String, String), String> {
    let skip = buffer.len().saturating_sub(CONTEXT_TRIPLES);
    let window: Vec<WindowEntry<'_>> = buffer
        .iter()
        .enumerate()
        .skip(skip)
        .map(|(step, t)| WindowEntry {
            step,
            action: t.action.as_ref(),
            reward: t.reward,
            outcome: &t.outcome,
        })
        .collect();
    let window = serde_json::to_string_pretty(&window).expect("window serializes");
    let eval = transport
        .complete(
            Purpose::Evaluate,
            &[
                Message::system("Summarize how well the planner's choices worked in this episode."),
                Message::user(format!("Steps of the episode, oldest first:\n{window}\n")),
            ],
        )
        .map_err(|e| format!("evaluation: {e}"))?;
    let grad = transport
        .complete(
            Purpose::Analyze,
            &[
                Message::system("Explain what in the planner instructions led to the outcome and what should change."),
                Message::user(format!(
                    "Planner instructions:\n{}\n\nEpisode evaluation:\n{}\n",
                    params.theta(),
                    eval
                )),
            ],
        )
        .map_err(|e| format!("analysis: {e}"))?;
    Ok((eval, grad))
}

/// Runs `cfg.episodes` episodes of `cfg.steps` steps from the task baseline,
/// writing one JSON record per line to `log`.
pub fn run_icrl(
    task: &TaskEnv,
    kb: &KnowledgeBase,
    params: PlannerParams,
    transport: &mut dyn Transport,
    cfg: &IcrlConfig,
    log: &mut dyn Write,
) -> Result<IcrlOutcome, IcrlError> {
    if cfg.episodes == 0 || cfg.steps == 0 {
        return Err(IcrlError::Empty);
    }
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut traj = Trajectory {
        baseline_cost: task.baseline_cost(),
        episodes: Vec::new(),
    };
    let mut best: Option<Best> = None;
    emit(
        log,
        &Record::Start {
            task: &task.name,
            baseline_cost: traj.baseline_cost,
            episodes: cfg.episodes,
            steps: cfg.steps,
            temperature: cfg.temperature,
            seed: cfg.seed,
            theta_version: params.version(),
        },
    )?;

    for k in 0..cfg.episodes {
        traj.episodes.push(Episode::default());
        let mut state = task.baseline.clone();
        let mut state_fb = task.baseline_feedback.clone();
        let mut last_attempt: Option<String> = None;
        for t in 0..cfg.steps {
            let step_seed: u64 = rng.random();
            let s_t = state.clone();
            let summary = state_fb.summary();
            let ctx = PlanContext {
                source: &state,
                feedback: &summary,
                last_attempt: last_attempt.as_deref(),
            };
            let (proposals, plan_error) = match plan(&ctx, kb, &params, transport) {
                Ok(ps) => (ps, None),
                Err(e) => {
                    warn!("episode {k} step {t}: {e}");
                    (Vec::new(), Some(e.to_string()))
                }
            };
            let action = select_index(&proposals, cfg.temperature, step_seed)
                .ok()
                .map(|i| proposals[i].clone());

            let mut lower_error = None;
            let mut candidate = None;
            let mut feedback = None;
            let r;
            let outcome;
            match &action {
                None => {
                    r = reward(&state_fb, &traj, &task.reward_weights);
                    outcome = "no proposal; state kept".to_string();
                }
                Some(a) => match lower_plan(&state, a, kb, transport) {
                    Ok(src) => {
                        let fb = validate(&src, task);
                        r = reward(&fb, &traj, &task.reward_weights);
                        outcome = fb.summary();
                        candidate = Some(src);
                        feedback = Some(fb);
                    }
                    Err(e) => {
                        r = 0.0;
                        outcome = format!("lowering failed: {e}");
                        lower_error = Some(e.to_string());
                    }
                },
            }

            let accepted = feedback.as_ref().is_some_and(Feedback::passed);
            if accepted {
                let src = candidate.clone().expect("accepted candidate");
                let fb = feedback.clone().expect("accepted feedback");
                if best.as_ref().is_none_or(|b| r > b.reward) {
                    best = Some(Best {
                        source: src.clone(),
                        reward: r,
                        episode: k,
                        step: t,
                        feedback: fb.clone(),
                    });
                }
                state = src;
                state_fb = fb;
                last_attempt = None;
            } else if action.is_some() {
                last_attempt = Some(outcome.clone());
            }

            emit(
                log,
                &Record::Step {
                    episode: k,
                    step: t,
                    theta_version: params.version(),
                    proposals: &proposals,
                    plan_error,
                    action: action.as_ref(),
                    lower_error,
                    candidate: candidate.as_deref(),
                    feedback: feedback.as_ref(),
                    reward: r,
                    accepted,
                    best_reward: best.as_ref().map(|b| b.reward),
                },
            )?;
            let ep = traj.episodes.last_mut().expect("episode pushed");
            ep.buffer.push(Triple {
                state: s_t,
                action,
                reward: r,
                outcome,
            });
        }

        let buffer = traj.episodes[k].buffer.clone();
        let mut error = None;
        match evaluate_episode(&buffer, &params, transport) {
            Ok((eval, grad)) => {
                params = update_params(&params, &grad, transport);
                let ep = &mut traj.episodes[k];
                ep.evaluation = Some(eval);
                ep.gradient = Some(grad);
            }
            Err(e) => {
                warn!("episode {k}: {e}; planner unchanged");
                error = Some(e);
            }
        }
        let ep = &traj.episodes[k];
        emit(
            log,
            &Record::Episode {
                episode: k,
                evaluation: ep.evaluation.as_deref(),
                gradient: ep.gradient.as_deref(),
                error,
                theta_version: params.version(),
                theta: params.theta(),
            },
        )?;
    }
    emit(
        log,
        &Record::End {
            best_reward: best.as_ref().map(|b| b.reward),
            best_episode: best.as_ref().map(|b| b.episode),
            best_step: best.as_ref().map(|b| b.step),
        },
    )?;
    Ok(IcrlOutcome {
        best,
        trajectory: traj,
        params,
    })
}

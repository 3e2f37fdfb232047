//! The experiment runners. Each computes replicates on the thread pool and
//! writes results in replicate order, so output bytes do not depend on the
//! number of jobs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde_json::json;

use chunkrnn_core::analysis::{representation_study, PositionAccuracy};
use chunkrnn_core::chunked::{chunked_run, transfer, PhaseRecord, ProtocolOutcome, TransferOutcome};
use chunkrnn_core::chunking::{ContextTagger, TagStream};
use chunkrnn_core::environment::{generate, Token};
use chunkrnn_core::naive::{
    naive_run, run_job, summarize, sweep_jobs, NaiveRunSpec, RunMetrics, SweepJob, PLATEAU_TAIL, POSITION_TAIL,
};
use chunkrnn_core::nn::RnnStack;
use chunkrnn_core::rng::derive_seed;

use crate::checkpoint;
use crate::compare::compare;
use crate::config::ExperimentConfig;
use crate::gradcheck;
use crate::manifest::{self, Manifest, MetricFile, ReplicateSeed};
use crate::output::{csv, tsv, OutputDir};

/// What a run produced besides its files.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub replicates: Vec<ReplicateSeed>,
    pub metrics: Vec<MetricFile>,
    /// Non-fatal failure reported through the exit status.
    pub failure: Option<String>,
}

pub struct Runner<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: &'a mut OutputDir,
    pub pool: &'a ThreadPool,
    pub inputs: &'a [PathBuf],
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, f)
}

fn seeds(cfg: &ExperimentConfig) -> Vec<ReplicateSeed> {
    (0..cfg.replicates)
        .map(|i| ReplicateSeed {
            index: i,
            seed: derive_seed(cfg.seed, i as u64),
        })
        .collect()
}

fn recorded(step: usize, last: usize, every: usize) -> bool {
    step % every == 0 || step == last
}

fn series(m: &RunMetrics, every: usize, phase: Option<&dyn Fn(usize) -> &'static str>) -> Vec<Vec<String>> {
    let last = m.first_error_step + m.windowed_error.len().saturating_sub(1);
    m.error_series()
        .filter(|(s, _)| recorded(*s, last, every))
        .map(|(s, e)| match phase {
            Some(p) => vec![p(s).to_string(), s.to_string(), f(e)],
            None => vec![s.to_string(), f(e)],
        })
        .collect()
}

fn positions_csv(p: &[PositionAccuracy]) -> String {
    csv(
        &["position", "accuracy", "n"],
        p.iter()
            .map(|p| vec![p.position.value().to_string(), f(p.accuracy), p.n.to_string()]),
    )
}

fn checkpoint_text(stack: &RnnStack, seed: u64, role: &str) -> String {
    let meta = BTreeMap::from([
        ("role".to_string(), role.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    checkpoint::write(stack, &meta)
}

fn phase_lookup(phases: &[PhaseRecord]) -> impl Fn(usize) -> &'static str + '_ {
    move |step| {
        phases
            .iter()
            .filter(|p| p.steps > 0)
            .find(|p| step >= p.start && step < p.start + p.steps)
            .map_or("unknown", |p| p.name)
    }
}

fn protocol_log(phases: &[PhaseRecord]) -> String {
    phases
        .iter()
        .map(|p| {
            json!({
                "phase": p.name,
                "start": p.start,
                "steps": p.steps,
                "final_error": p.final_error,
                "tagger_accuracy": p.tagger_accuracy,
            })
            .to_string()
                + "\n"
        })
        .collect()
}

fn mask_dump(tokens: &[Token], mask: &[bool], tagger: &ContextTagger) -> String {
    let mut state = tagger.initial_state();
    let mut tags = TagStream::new(tokens.first().copied().unwrap_or(Token::G));
    let rows = tokens.iter().zip(mask).enumerate().map(|(i, (t, b))| {
        let fired = tagger.fires(&mut state, *t);
        let tag = tags.step(*t, fired);
        vec![i.to_string(), t.to_string(), (*b as u8).to_string(), tag.to_string()]
    });
    tsv(&["step", "token", "mask_bit", "tag"], rows)
}

impl Runner<'_> {
    pub fn run(&mut self) -> Result<RunRecord> {
        match self.cfg.experiment.as_str() {
            "generate" => self.generate(),
            "naive" => self.naive(),
            "ablate" => self.ablate(),
            "chunked" | "constant-tag" => self.chunked(),
            "transfer" => self.transfer(),
            "analyze" => self.analyze(),
            "compare" => self.compare(),
            "gradcheck" => self.gradcheck(),
            other => bail!("{}", crate::config::unknown_experiment(other)),
        }
    }

    fn metric(
        &mut self,
        record: &mut RunRecord,
        name: String,
        text: &str,
        columns: &[&str],
        replicate: usize,
    ) -> Result<()> {
        self.out.write(&name, text.as_bytes())?;
        record.metrics.push(MetricFile {
            file: name,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            replicate,
        });
        Ok(())
    }

    fn generate(&mut self) -> Result<RunRecord> {
        let t = generate(&self.cfg.env, self.cfg.length)?;
        let rows = (0..t.len()).map(|i| {
            vec![
                t.tokens[i].to_string(),
                t.positions[i].value().to_string(),
                (t.entry_mask[i] as u8).to_string(),
            ]
        });
        self.out.write("sequence.tsv", tsv(&[], rows).as_bytes())?;
        Ok(RunRecord {
            replicates: vec![ReplicateSeed {
                index: 0,
                seed: self.cfg.seed,
            }],
            ..Default::default()
        })
    }

    fn naive_spec(&self) -> NaiveRunSpec {
        let c = self.cfg;
        NaiveRunSpec {
            env: c.env.clone(),
            neurons: c.neurons,
            layers: c.layers,
            activation: c.activation,
            train: c.train,
            steps: c.steps,
            win: c.win,
        }
    }

    fn naive(&mut self) -> Result<RunRecord> {
        let base = self.naive_spec();
        let reps = seeds(self.cfg);
        let runs: Vec<_> = self
            .pool
            .install(|| reps.par_iter().map(|r| naive_run(&base.seeded(r.seed))).collect());
        let mut record = RunRecord {
            replicates: reps.clone(),
            ..Default::default()
        };
        let mut summary = Vec::new();
        for (r, (model, m)) in reps.iter().zip(&runs) {
            let i = r.index;
            let text = csv(&["step", "windowed_error"], series(m, self.cfg.record_every, None));
            self.metric(
                &mut record,
                format!("metrics_r{i:03}.csv"),
                &text,
                &["step", "windowed_error"],
                i,
            )?;
            self.out.write(
                &format!("positions_r{i:03}.csv"),
                positions_csv(&m.per_position(POSITION_TAIL)).as_bytes(),
            )?;
            self.out.write(
                &format!("checkpoint_r{i:03}.tsv"),
                checkpoint_text(model.stack(), r.seed, "naive").as_bytes(),
            )?;
            summary.push(vec![
                i.to_string(),
                r.seed.to_string(),
                opt(m.final_error()),
                opt(m.plateau_error(PLATEAU_TAIL)),
                f(m.accuracy()),
            ]);
        }
        let header = ["replicate", "seed", "final_error", "plateau_error", "accuracy"];
        self.out.write("summary.csv", csv(&header, summary).as_bytes())?;
        Ok(record)
    }

    fn ablate(&mut self) -> Result<RunRecord> {
        let base = self.naive_spec();
        let jobs = sweep_jobs(&self.cfg.grid, self.cfg.replicates, self.cfg.seed);
        let mut cells: Vec<_> = jobs.iter().map(|j| j.cell).collect();
        cells.dedup();
        let mut summary_rows = Vec::new();
        let mut final_rows = Vec::new();
        let every = self.cfg.record_every;
        for cell in cells {
            let cell_jobs: Vec<&SweepJob> = jobs.iter().filter(|j| j.cell == cell).collect();
            let results: Vec<(SweepJob, RunMetrics)> = self.pool.install(|| {
                cell_jobs
                    .par_iter()
                    .map(|j| {
                        let m = run_job(j, &base);
                        // Only the error series is summarised; drop the rest early.
                        let slim = RunMetrics {
                            windowed_error: m.windowed_error,
                            first_error_step: m.first_error_step,
                            ..Default::default()
                        };
                        (**j, slim)
                    })
                    .collect()
            });
            for (job, m) in &results {
                final_rows.push(vec![
                    cell.neurons.to_string(),
                    cell.layers.to_string(),
                    cell.window.to_string(),
                    job.replicate.to_string(),
                    job.seed.to_string(),
                    opt(m.plateau_error(PLATEAU_TAIL)),
                ]);
            }
            for s in summarize(&results) {
                let last = s.first_step + s.median.len().saturating_sub(1);
                for i in 0..s.median.len() {
                    let step = s.first_step + i;
                    if recorded(step, last, every) {
                        summary_rows.push(vec![
                            cell.neurons.to_string(),
                            cell.layers.to_string(),
                            cell.window.to_string(),
                            step.to_string(),
                            f(s.median[i]),
                            f(s.q25[i]),
                            f(s.q75[i]),
                        ]);
                    }
                }
            }
        }
        let header = ["neurons", "layers", "w", "step", "median", "q25", "q75"];
        self.out
            .write("ablation_summary.csv", csv(&header, summary_rows).as_bytes())?;
        let header = ["neurons", "layers", "w", "replicate", "seed", "plateau_error"];
        self.out
            .write("ablation_finals.csv", csv(&header, final_rows).as_bytes())?;
        Ok(RunRecord {
            replicates: seeds(self.cfg),
            ..Default::default()
        })
    }

    fn chunked(&mut self) -> Result<RunRecord> {
        let reps = seeds(self.cfg);
        let (cfg, mode) = (self.cfg, self.cfg.tag);
        let runs: Vec<Result<ProtocolOutcome, _>> = self.pool.install(|| {
            reps.par_iter()
                .map(|r| chunked_run(&cfg.chunked.seeded(r.seed), &cfg.env.with_seed(r.seed), mode))
                .collect()
        });
        let mut record = RunRecord {
            replicates: reps.clone(),
            ..Default::default()
        };
        let mut summary = Vec::new();
        for (r, out) in reps.iter().zip(runs) {
            let out = out.with_context(|| format!("replicate {}", r.index))?;
            let i = r.index;
            let columns = ["phase", "step", "windowed_error"];
            let lookup = phase_lookup(&out.phases);
            let text = csv(&columns, series(&out.metrics, self.cfg.record_every, Some(&lookup)));
            self.metric(&mut record, format!("metrics_r{i:03}.csv"), &text, &columns, i)?;
            self.out.write(
                &format!("positions_r{i:03}.csv"),
                positions_csv(&out.metrics.per_position(POSITION_TAIL)).as_bytes(),
            )?;
            self.out
                .write(&format!("protocol_r{i:03}.jsonl"), protocol_log(&out.phases).as_bytes())?;
            self.out.write(
                &format!("checkpoint_r{i:03}.tsv"),
                checkpoint_text(out.model.stack(), r.seed, "chunked").as_bytes(),
            )?;
            if let (Some(sleep), Some(tagger)) = (&out.sleep, out.model.tagger()) {
                self.out.write(
                    &format!("mask_r{i:03}.tsv"),
                    mask_dump(&sleep.tokens, &sleep.detection.mask.bits, tagger).as_bytes(),
                )?;
                self.out.write(
                    &format!("tagger_r{i:03}.tsv"),
                    checkpoint_text(&tagger.net, r.seed, "tagger").as_bytes(),
                )?;
            }
            let s = out.sleep.as_ref();
            summary.push(vec![
                i.to_string(),
                r.seed.to_string(),
                opt(out.metrics.plateau_error(PLATEAU_TAIL)),
                opt(s.map(|s| s.mask_score.f1)),
                opt(s.map(|s| s.mask_score.precision)),
                opt(s.map(|s| s.mask_score.recall)),
                opt(s.map(|s| s.tagger.heldout_accuracy)),
                opt(s.map(|s| s.tagger_score.f1)),
            ]);
        }
        let header = [
            "replicate",
            "seed",
            "plateau_error",
            "mask_f1",
            "mask_precision",
            "mask_recall",
            "tagger_heldout_accuracy",
            "tagger_entry_f1",
        ];
        self.out.write("summary.csv", csv(&header, summary).as_bytes())?;
        Ok(record)
    }

    fn transfer(&mut self) -> Result<RunRecord> {
        let reps = seeds(self.cfg);
        let cfg = self.cfg;
        let runs: Vec<Result<TransferOutcome, _>> = self.pool.install(|| {
            reps.par_iter()
                .map(|r| {
                    let t = chunkrnn_core::chunked::TransferConfig {
                        model: cfg.transfer.model.seeded(r.seed),
                        ..cfg.transfer
                    };
                    transfer(
                        &t,
                        &cfg.source_env.with_seed(r.seed),
                        &cfg.env.with_seed(derive_seed(r.seed, 1)),
                    )
                })
                .collect()
        });
        let columns = ["step", "windowed_error"];
        let mut sub: BTreeMap<&str, Vec<MetricFile>> = BTreeMap::new();
        let mut rows = Vec::new();
        let auc = cfg.transfer.auc_steps;
        for (r, out) in reps.iter().zip(runs) {
            let out = out.with_context(|| format!("replicate {}", r.index))?;
            let i = r.index;
            for (model, m) in [("chunked", &out.chunked), ("naive", &out.naive)] {
                let name = format!("{model}/metrics_r{i:03}.csv");
                let text = csv(&columns, series(m, cfg.record_every, None));
                self.out.write(&name, text.as_bytes())?;
                sub.entry(model).or_default().push(MetricFile {
                    file: format!("metrics_r{i:03}.csv"),
                    columns: columns.iter().map(|c| c.to_string()).collect(),
                    replicate: i,
                });
            }
            self.out
                .write(&format!("protocol_r{i:03}.jsonl"), protocol_log(&out.phases).as_bytes())?;
            let (ac, an) = (out.auc_chunked(auc), out.auc_naive(auc));
            rows.push(vec![
                i.to_string(),
                r.seed.to_string(),
                f(ac),
                f(an),
                f(an - ac),
                opt(out.source_chunked.plateau_error(PLATEAU_TAIL)),
                opt(out.source_naive.plateau_error(PLATEAU_TAIL)),
                f(out.target_sleep.mask_score.f1),
                f(out.target_sleep.tagger.heldout_accuracy),
            ]);
        }
        let header = [
            "replicate",
            "seed",
            "auc_chunked",
            "auc_naive",
            "advantage",
            "source_plateau_chunked",
            "source_plateau_naive",
            "target_mask_f1",
            "target_tagger_accuracy",
        ];
        self.out.write("transfer.csv", csv(&header, rows).as_bytes())?;
        for (model, metrics) in sub {
            let m = Manifest {
                experiment: format!("transfer-{model}"),
                version: env!("CARGO_PKG_VERSION").to_string(),
                root_seed: cfg.seed,
                replicates: reps.clone(),
                config: cfg.echo(),
                files: metrics.iter().map(|f| f.file.clone()).collect(),
                metrics,
                jobs: self.pool.current_num_threads(),
                wall_time_seconds: 0.0,
            };
            let text = serde_json::to_string_pretty(&m)? + "\n";
            self.out
                .write(&format!("{model}/{}", manifest::FILE_NAME), text.as_bytes())?;
        }
        Ok(RunRecord {
            replicates: reps,
            ..Default::default()
        })
    }

    fn analyze(&mut self) -> Result<RunRecord> {
        let base = self.naive_spec();
        let reps = seeds(self.cfg);
        let (snap, dims) = (self.cfg.snapshot_steps, self.cfg.dims);
        let runs: Vec<_> = self.pool.install(|| {
            reps.par_iter()
                .map(|r| representation_study(&base.seeded(r.seed), snap, dims))
                .collect()
        });
        let mut record = RunRecord {
            replicates: reps.clone(),
            ..Default::default()
        };
        let mut summary = Vec::new();
        for (r, rep) in reps.iter().zip(runs) {
            let rep = rep.with_context(|| format!("replicate {}", r.index))?;
            let i = r.index;
            let emb = Token::ALL.iter().enumerate().map(|(k, t)| {
                let c = &rep.embedding.coords[k];
                let community = match t.community() {
                    Some(c) => c.id().to_string(),
                    None => "hub".into(),
                };
                vec![
                    t.to_string(),
                    community,
                    f(c.first().copied().unwrap_or(0.0)),
                    f(c.get(1).copied().unwrap_or(0.0)),
                ]
            });
            self.out.write(
                &format!("embedding_r{i:03}.csv"),
                csv(&["token", "community", "x", "y"], emb).as_bytes(),
            )?;
            let spec = rep
                .embedding
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(d, l)| vec![(d + 1).to_string(), f(*l)]);
            self.out.write(
                &format!("spectrum_r{i:03}.csv"),
                csv(&["dim", "eigenvalue"], spec).as_bytes(),
            )?;
            self.out.write(
                &format!("positions_r{i:03}.csv"),
                positions_csv(&rep.positions).as_bytes(),
            )?;
            let text = csv(
                &["step", "windowed_error"],
                series(&rep.metrics, self.cfg.record_every, None),
            );
            self.metric(
                &mut record,
                format!("metrics_r{i:03}.csv"),
                &text,
                &["step", "windowed_error"],
                i,
            )?;
            summary.push(vec![
                i.to_string(),
                r.seed.to_string(),
                rep.knee.to_string(),
                f(rep.separation.silhouette),
                rep.separation.separable.to_string(),
                opt(rep.metrics.plateau_error(PLATEAU_TAIL)),
            ]);
        }
        let header = ["replicate", "seed", "knee", "silhouette", "separable", "plateau_error"];
        self.out.write("analysis.csv", csv(&header, summary).as_bytes())?;
        Ok(record)
    }

    fn compare(&mut self) -> Result<RunRecord> {
        let [a, b] = self.inputs else {
            bail!("compare needs exactly two manifests or run directories");
        };
        let c = compare(a, b, self.cfg.auc_steps)?;
        let rows = c
            .rows
            .iter()
            .map(|(s, ea, eb)| vec![s.to_string(), f(*ea), f(*eb), f(ea - eb)]);
        self.out.write(
            "comparison.csv",
            csv(&["step", "error_a", "error_b", "difference"], rows).as_bytes(),
        )?;
        self.out
            .write("comparison.json", (serde_json::to_string_pretty(&c)? + "\n").as_bytes())?;
        Ok(RunRecord::default())
    }

    fn gradcheck(&mut self) -> Result<RunRecord> {
        let rows = gradcheck::suite(self.cfg.seed, self.cfg.eps, self.cfg.tolerance);
        let failed = rows.iter().filter(|r| !r.passed).count();
        let text = csv(
            &[
                "arch",
                "layers",
                "neurons",
                "window",
                "side_layer",
                "params",
                "max_relative_error",
                "passed",
            ],
            rows.iter().map(|r| {
                vec![
                    r.arch.to_string(),
                    r.layers.to_string(),
                    r.neurons.to_string(),
                    r.window.to_string(),
                    r.side_layer.map_or_else(String::new, |l| l.to_string()),
                    r.params.to_string(),
                    f(r.max_relative_error),
                    r.passed.to_string(),
                ]
            }),
        );
        self.out.write("gradcheck.csv", text.as_bytes())?;
        Ok(RunRecord {
            replicates: vec![ReplicateSeed {
                index: 0,
                seed: self.cfg.seed,
            }],
            failure: (failed > 0).then(|| format!("{failed} of {} gradient checks failed", rows.len())),
            ..Default::default()
        })
    }
}

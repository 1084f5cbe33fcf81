use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vhem::io::{load_model, read_dataset, save_dataset, save_model, LabeledSequence, Model, ModelFile};
use vhem::{
    baum_welch, estep_pair, h3m_em, h3m_labels, hier_cluster, leaf_labels, matching_accuracy, mc_expected_loglik,
    rand_index, sample_dataset, split_estimate_aggregate, synth_benchmark, vhem_reduce, vhem_reduce_from,
    CovarianceType, EmConfig, H3m64, InitStrategy, PipelineConfig, Sequence64, SynthSpec, VhemConfig,
};

use crate::report::{labels_table, num, Report};
use crate::{Command, Common, CovArg, InitArg, ReduceOpts};

fn cov_type(arg: CovArg) -> CovarianceType {
    match arg {
        CovArg::Diag => CovarianceType::Diagonal,
        CovArg::Full => CovarianceType::Full,
    }
}

fn em_config(common: &Common) -> EmConfig {
    EmConfig {
        max_iters: common.max_iters,
        tol: common.tol,
        cov_floor: common.cov_floor,
        cov_type: common.cov_type.map(cov_type).unwrap_or_default(),
    }
}

fn vhem_config(common: &Common, kr: usize, opts: &ReduceOpts) -> VhemConfig {
    VhemConfig {
        n_virtual: opts.virtual_samples,
        tau_virtual: opts.tau_virtual,
        max_iters: common.max_iters,
        tol: common.tol,
        cov_floor: common.cov_floor,
        cov_type: common.cov_type.map(cov_type),
        seed: common.seed,
        restarts: opts.restarts,
        ..VhemConfig::new(kr)
    }
}

/// Sequences with their ids; records without one are named by position.
fn load_sequences(path: &Path) -> Result<(Vec<Sequence64>, Vec<String>)> {
    let records = read_dataset::<f64>(path)?;
    if records.is_empty() {
        bail!("{} holds no sequences", path.display());
    }
    let ids =
        records.iter().enumerate().map(|(i, r)| r.sequence.id.clone().unwrap_or_else(|| format!("seq-{i}"))).collect();
    Ok((records.into_iter().map(|r| r.sequence).collect(), ids))
}

fn load_h3m(path: &Path) -> Result<H3m64> {
    Ok(load_model::<f64>(path)?.model.into_h3m())
}

fn save(path: &Path, model: Model<f64>, seed: u64) -> Result<()> {
    save_model(path, &ModelFile { model, seed: Some(seed) })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn index_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn trace_rows(trace: &[f64], marks: &[usize]) -> Vec<Vec<String>> {
    trace
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), num(*v), (marks.contains(&i) as u8).to_string()])
        .collect()
}

pub fn run(common: &Common, command: Command) -> Result<()> {
    let mut report = Report::create(&common.report_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    match command {
        Command::TrainHmm { data, states, mix, out } => {
            let (seqs, _) = load_sequences(&data)?;
            let fit = report.time("baum_welch", || baum_welch(&seqs, states, mix, &em_config(common), &mut rng))?;
            log::info!(
                "{} iterations, log-likelihood {:.6}, converged {}",
                fit.loglik_trace.len(),
                fit.loglik_trace.last().copied().unwrap_or(f64::NAN),
                fit.converged
            );
            report.table("trace.csv", &["iteration", "loglik", "reseed"], trace_rows(&fit.loglik_trace, &[]))?;
            save(&out, Model::Hmm(fit.model), common.seed)?;
        }
        Command::TrainH3m { data, k, states, mix, out } => {
            let (seqs, ids) = load_sequences(&data)?;
            let fit = report.time("h3m_em", || h3m_em(&seqs, k, states, mix, &em_config(common), &mut rng))?;
            log::info!(
                "{} iterations, {} reseeds, converged {}",
                fit.loglik_trace.len(),
                fit.reseeds.len(),
                fit.converged
            );
            report.table(
                "trace.csv",
                &["iteration", "loglik", "reseed"],
                trace_rows(&fit.loglik_trace, &fit.reseeds),
            )?;
            let labels = h3m_labels(&fit.model, &seqs)?;
            report.table("assignments.csv", &["id", "label"], labels_table(&ids, &labels))?;
            save(&out, Model::H3m(fit.model), common.seed)?;
        }
        Command::Reduce { base, kr, init, init_file, opts, out } => {
            let base = load_h3m(&base)?;
            let mut config = vhem_config(common, kr, &opts);
            let res = match init {
                InitArg::File => {
                    let path = init_file.context("--init file needs --init-file")?;
                    config.init = InitStrategy::Provided;
                    let initial = load_h3m(&path)?;
                    report.time("reduce", || vhem_reduce_from(&base, initial, &config))?
                }
                InitArg::SubsetPerturb | InitArg::Random => {
                    config.init =
                        if init == InitArg::Random { InitStrategy::Random } else { InitStrategy::SubsetPerturb };
                    report.time("reduce", || vhem_reduce(&base, &config))?
                }
            };
            log::info!(
                "{} → {} components in {} iterations (restart {}, {} rescues, {} populated)",
                base.len(),
                kr,
                res.bound_history.len(),
                res.restart,
                res.rescues.len(),
                res.effective_k
            );
            report.table(
                "trace.csv",
                &["iteration", "bound", "rescue"],
                trace_rows(&res.bound_history, &res.rescues),
            )?;
            let ids = index_ids(base.len());
            report.table("assignments.csv", &["id", "label"], labels_table(&ids, &res.hard_labels))?;
            let mut header = vec!["id".to_string()];
            header.extend((0..kr).map(|j| format!("z{j}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows = res
                .assignments
                .z
                .rows()
                .into_iter()
                .enumerate()
                .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(|v| num(*v))).collect());
            report.table("responsibilities.csv", &header, rows)?;
            save(&out, Model::H3m(res.reduced), common.seed)?;
        }
        Command::Hier { leaves, ladder, opts, out_dir } => {
            let leaves = load_h3m(&leaves)?;
            let config = vhem_config(common, ladder.first().copied().unwrap_or(1), &opts);
            let levels = report.time("hier", || hier_cluster(leaves.components(), &ladder, &config))?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut trace = Vec::new();
            for (l, lv) in levels.iter().enumerate().skip(1) {
                for (i, b) in lv.bound_history.iter().enumerate() {
                    trace.push(vec![l.to_string(), i.to_string(), num(*b)]);
                }
                save(&out_dir.join(format!("level-{l}.json")), Model::H3m(lv.models.clone()), common.seed)?;
            }
            report.table("trace.csv", &["level", "iteration", "bound"], trace)?;
            let per_level: Vec<Vec<usize>> = (1..levels.len()).map(|l| leaf_labels(&levels, l)).collect();
            let mut header = vec!["id".to_string()];
            header.extend((1..levels.len()).map(|l| format!("level-{l}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows = (0..leaves.len()).map(|i| {
                std::iter::once(i.to_string()).chain(per_level.iter().map(|lab| lab[i].to_string())).collect()
            });
            report.table("assignments.csv", &header, rows)?;
        }
        Command::Synth { groups, per_group, separation, states, mix, dim, per_model, tau, out_dir } => {
            let spec = SynthSpec { n_groups: groups, per_group, separation, n_states: states, n_mix: mix, dim };
            let bench = report.time("synth", || synth_benchmark::<f64, _>(&spec, &mut rng))?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let ids = index_ids(bench.hmms.len());
            let mixture = H3m64::uniform(bench.hmms.clone())?;
            save(&out_dir.join("models.json"), Model::H3m(mixture), common.seed)?;
            report_labels(&out_dir.join("model-labels.csv"), &ids, &bench.labels)?;
            if per_model > 0 {
                let (seqs, truth) = sample_dataset(&bench.hmms, &bench.labels, per_model, tau, &mut rng)?;
                let ids: Vec<String> = seqs.iter().map(|s| s.id.clone().unwrap_or_default()).collect();
                let records: Vec<LabeledSequence<f64>> = seqs
                    .into_iter()
                    .zip(&truth)
                    .map(|(sequence, l)| LabeledSequence { sequence, label: Some(l.to_string()) })
                    .collect();
                let path = out_dir.join("data.jsonl");
                save_dataset(&path, &records)?;
                log::info!("wrote {} ({} sequences)", path.display(), records.len());
                report_labels(&out_dir.join("data-labels.csv"), &ids, &truth)?;
            }
        }
        Command::EvalRand { pred, truth, pred_column } => {
            let pred = read_labels(&pred, &pred_column)?;
            let truth = read_labels(&truth, "label")?;
            let truth_by_id: HashMap<&str, &str> = truth.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
            if pred.len() != truth.len() {
                bail!("{} predicted labels but {} true labels", pred.len(), truth.len());
            }
            let mut a = Vec::with_capacity(pred.len());
            let mut b = Vec::with_capacity(pred.len());
            for (id, l) in &pred {
                let t = truth_by_id.get(id.as_str()).with_context(|| format!("id {id:?} has no true label"))?;
                a.push(l.as_str());
                b.push(*t);
            }
            let ri = rand_index(&a, &b)?;
            let mut rows = vec![vec!["rand_index".into(), num(ri)]];
            println!("rand_index\t{ri}");
            match matching_accuracy(&a, &b) {
                Ok(acc) => {
                    println!("accuracy\t{acc}");
                    rows.push(vec!["accuracy".into(), num(acc)]);
                }
                Err(e) => log::warn!("accuracy skipped: {e}"),
            }
            report.table("eval.csv", &["metric", "value"], rows)?;
        }
        Command::McOracle { base, reduced, base_index, reduced_index, tau, samples } => {
            let pick = |path: &Path, k: usize| -> Result<vhem::Hmm64> {
                let m = load_h3m(path)?;
                m.components()
                    .get(k)
                    .cloned()
                    .with_context(|| format!("{} has {} components, no index {k}", path.display(), m.len()))
            };
            let (b, r) = (pick(&base, base_index)?, pick(&reduced, reduced_index)?);
            let bound = report.time("bound", || estep_pair(&b, &r, tau))?.objective;
            let (mean, se) = report.time("monte_carlo", || mc_expected_loglik(&b, &r, tau, samples, &mut rng))?;
            println!("bound\t{bound}\nmc_mean\t{mean}\nmc_stderr\t{se}");
            report.table(
                "oracle.csv",
                &["tau", "samples", "bound", "mc_mean", "mc_stderr"],
                [vec![tau.to_string(), samples.to_string(), num(bound), num(mean), num(se)]],
            )?;
        }
        Command::SplitPipeline { data, portions, portion_k, kr, states, mix, opts, out } => {
            let (seqs, ids) = load_sequences(&data)?;
            let config = PipelineConfig {
                n_portions: portions,
                portion_k,
                n_states: states,
                n_mix: mix,
                em: em_config(common),
                reduce: vhem_config(common, kr, &opts),
                seed: common.seed,
            };
            let res = report.time("pipeline", || split_estimate_aggregate(&seqs, &config))?;
            let rep = &res.report;
            log::info!("pooled {} components from {} portions", rep.pooled_size, portions);
            let rows = rep
                .portion_sizes
                .iter()
                .zip(&rep.portion_logliks)
                .enumerate()
                .map(|(p, (n, ll))| vec![p.to_string(), n.to_string(), num(*ll)]);
            report.table("portions.csv", &["portion", "size", "loglik"], rows)?;
            report.table("trace.csv", &["iteration", "bound", "rescue"], trace_rows(&rep.bound_history, &[]))?;
            let labels = h3m_labels(&res.model, &seqs)?;
            report.table("assignments.csv", &["id", "label"], labels_table(&ids, &labels))?;
            save(&out, Model::H3m(res.model), common.seed)?;
        }
    }
    report.finish()
}

fn report_labels(path: &Path, ids: &[String], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["id", "label"])?;
    for row in labels_table(ids, labels) {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `(id, label)` pairs from a CSV with an `id` column and the named label column.
fn read_labels(path: &Path, column: &str) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h == name).with_context(|| format!("{} has no {name:?} column", path.display()))
    };
    let (id_col, label_col) = (find("id")?, find(column)?);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{} record {}", path.display(), line + 1))?;
        out.push((rec[id_col].to_string(), rec[label_col].to_string()));
    }
    Ok(out)
}

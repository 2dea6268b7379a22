//! Experiment-runner commands binding the pipeline together: data
//! generation, regime training, embedding analyses, generalization
//! experiments, and the cross-regime report.
//!
//! Every command reads its inputs from the configured output directory and
//! writes a manifest naming the config hash, the derived seeds, and a
//! content hash per emitted file. Timestamps appear only inside manifests,
//! so everything else is byte-reproducible from the master seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{fnv1a64, hex64, ExperimentConfig};
use crate::datagen::{generate, split, Dataset};
use crate::error::{Error, Result};
use crate::generalization::{run_experiment, Condition, GeneralizationReport, MatchType};
use crate::network::{init_network, train, EmbeddingMatrix, EpochStats, Network, Regime};
use crate::repr_analysis::{
    agglomerative_cluster, cluster_purity, cut_tree, inner_product_similarity, newick_export,
    pca_project, pearson_r2, GoldSimilarity, Linkage,
};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: String,
    config_hash: String,
    master_seed: u64,
    seeds: BTreeMap<String, u64>,
    files: BTreeMap<String, String>,
    created_unix: u64,
    config: ExperimentConfig,
}

/// Model checkpoint: config echo plus the full parameter state (row-major
/// tensors and the frozen mask live inside `network`).
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub config_hash: String,
    pub regime: Regime,
    pub master_seed: u64,
    pub network: Network,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PurityCut {
    pub k: usize,
    pub purity: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PurityReport {
    pub basic: PurityCut,
    pub sub: PurityCut,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct R2Report {
    pub r2: f64,
    pub n_pairs: usize,
    pub gold_file: String,
}

fn write_text(path: &Path, content: &str) -> Result<String> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex64(fnv1a64(content.as_bytes())))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(hex64(fnv1a64(read_text(path)?.as_bytes())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidConfig(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn write_manifest(
    cfg: &ExperimentConfig,
    command: &str,
    seeds: BTreeMap<String, u64>,
    files: BTreeMap<String, String>,
) -> Result<()> {
    let manifest = Manifest {
        command: command.to_string(),
        config_hash: cfg.config_hash(),
        master_seed: cfg.master_seed,
        seeds,
        files,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: cfg.clone(),
    };
    let name = format!("manifest_{}.json", command.replace(' ', "_"));
    write_json(&cfg.out_dir.join(name), &manifest)?;
    Ok(())
}

fn taxonomy_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("taxonomy.csv")
}

fn dataset_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("dataset.csv")
}

fn checkpoint_path(cfg: &ExperimentConfig, regime: Regime) -> PathBuf {
    cfg.out_dir.join(format!("checkpoint_{}.json", regime.as_str()))
}

/// Loads the generated taxonomy and dataset from the output directory.
fn load_inputs(cfg: &ExperimentConfig) -> Result<(Taxonomy, Dataset)> {
    let taxonomy = Taxonomy::read_csv(&taxonomy_path(cfg))?;
    let dataset = Dataset::read_csv(&dataset_path(cfg), &taxonomy)?;
    Ok((taxonomy, dataset))
}

/// The held-out stimulus set shared by analyze and generalize.
fn held_out(cfg: &ExperimentConfig) -> Result<(Taxonomy, Dataset)> {
    let (taxonomy, dataset) = load_inputs(cfg)?;
    let (_, test) = split(&dataset, cfg.holdout_per_sub, cfg.split_seed())?;
    Ok((taxonomy, test))
}

fn load_checkpoint(cfg: &ExperimentConfig, regime: Regime) -> Result<Network> {
    let ckpt: CheckpointFile = read_json(&checkpoint_path(cfg, regime))?;
    Ok(ckpt.network)
}

/// Writes `taxonomy.csv`, `dataset.csv`, and the generation manifest.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    let taxonomy = cfg.taxonomy.resolve()?;
    let dataset = generate(&taxonomy, &cfg.gen_config())?;
    taxonomy.write_csv(&taxonomy_path(cfg))?;
    dataset.write_csv(&dataset_path(cfg))?;
    let mut files = BTreeMap::new();
    files.insert("taxonomy.csv".to_string(), hash_file(&taxonomy_path(cfg))?);
    files.insert("dataset.csv".to_string(), hash_file(&dataset_path(cfg))?);
    let mut seeds = BTreeMap::new();
    seeds.insert("datagen".to_string(), cfg.datagen_seed());
    write_manifest(cfg, "gen", seeds, files)?;
    println!(
        "wrote {} stimuli for {} basics x {} subs to {}",
        dataset.len(),
        taxonomy.n_basics(),
        taxonomy.n_subs(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn loss_history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,phase,loss_basic,loss_sub,loss_joint,acc_basic,acc_sub\n");
    for s in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.epoch,
            s.phase.as_str(),
            fmt_opt(s.loss_basic),
            fmt_opt(s.loss_sub),
            fmt_opt(s.loss_joint),
            fmt_opt(s.acc_basic),
            fmt_opt(s.acc_sub),
        ));
    }
    out
}

/// Trains one regime on the train split and writes the checkpoint plus the
/// per-epoch loss history.
pub fn cmd_train(cfg: &ExperimentConfig, regime: Regime) -> Result<()> {
    let (taxonomy, dataset) = load_inputs(cfg)?;
    let (train_set, _) = split(&dataset, cfg.holdout_per_sub, cfg.split_seed())?;
    let net = init_network(&cfg.net_config(&taxonomy, regime))?;
    let trained = train(net, &train_set, &cfg.train_config(regime))?;

    let ckpt = CheckpointFile {
        config_hash: cfg.config_hash(),
        regime,
        master_seed: cfg.master_seed,
        network: trained.network,
    };
    let ckpt_path = checkpoint_path(cfg, regime);
    let history_path = cfg
        .out_dir
        .join(format!("loss_history_{}.csv", regime.as_str()));
    let mut files = BTreeMap::new();
    files.insert(
        ckpt_path.file_name().unwrap().to_string_lossy().to_string(),
        write_json(&ckpt_path, &ckpt)?,
    );
    files.insert(
        history_path.file_name().unwrap().to_string_lossy().to_string(),
        write_text(&history_path, &loss_history_csv(&trained.history))?,
    );
    let mut seeds = BTreeMap::new();
    seeds.insert("net".to_string(), cfg.net_seed(regime));
    seeds.insert("train".to_string(), cfg.train_seed(regime));
    seeds.insert("split".to_string(), cfg.split_seed());
    write_manifest(cfg, &format!("train_{}", regime.as_str()), seeds, files)?;
    let last = trained.history.last();
    println!(
        "trained {} ({} epochs recorded, final acc basic={} sub={})",
        regime.as_str(),
        trained.history.len(),
        last.and_then(|s| s.acc_basic).map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into()),
        last.and_then(|s| s.acc_sub).map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into()),
    );
    Ok(())
}

/// Trains all four regimes; `parallel` runs them on separate threads with
/// independent seed streams, which leaves every artifact byte-identical to
/// the sequential run.
pub fn cmd_train_all(cfg: &ExperimentConfig, parallel: bool) -> Result<()> {
    if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = Regime::ALL
                .iter()
                .map(|&regime| scope.spawn(move || cmd_train(cfg, regime)))
                .collect();
            for handle in handles {
                handle.join().expect("training thread panicked")?;
            }
            Ok(())
        })
    } else {
        for regime in Regime::ALL {
            cmd_train(cfg, regime)?;
        }
        Ok(())
    }
}

fn embeddings_csv(taxonomy: &Taxonomy, emb: &EmbeddingMatrix) -> String {
    let mut out = String::from("sub,basic");
    for d in 0..emb.dim() {
        out.push_str(&format!(",e{d}"));
    }
    out.push('\n');
    for i in 0..emb.len() {
        out.push_str(&taxonomy.subs()[emb.sub_labels[i]]);
        out.push(',');
        out.push_str(&taxonomy.basics()[emb.basic_labels[i]]);
        for v in &emb.rows[i] {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Embeds the held-out stimuli with a trained checkpoint and writes the
/// similarity matrix, dendrogram, PCA projection, purity cuts, and (when a
/// gold file is configured) the R2 fit.
pub fn cmd_analyze(cfg: &ExperimentConfig, regime: Regime) -> Result<()> {
    let (taxonomy, test) = held_out(cfg)?;
    let network = load_checkpoint(cfg, regime)?;
    let emb = network.embed_dataset(&test)?;
    let tag = regime.as_str();
    let mut files = BTreeMap::new();

    let emb_path = cfg.out_dir.join(format!("embeddings_{tag}.csv"));
    files.insert(
        format!("embeddings_{tag}.csv"),
        write_text(&emb_path, &embeddings_csv(&taxonomy, &emb))?,
    );

    let sim = inner_product_similarity(&emb.rows);
    let sim_path = cfg.out_dir.join(format!("similarity_{tag}.csv"));
    sim.write_csv(&sim_path)?;
    files.insert(format!("similarity_{tag}.csv"), hash_file(&sim_path)?);

    let dendrogram = agglomerative_cluster(&emb.rows, Linkage::Average)?;
    let leaf_names: Vec<String> = (0..emb.len())
        .map(|i| format!("{}_{i}", taxonomy.subs()[emb.sub_labels[i]]))
        .collect();
    let newick = newick_export(&dendrogram, &leaf_names)?;
    let nwk_path = cfg.out_dir.join(format!("dendrogram_{tag}.nwk"));
    files.insert(format!("dendrogram_{tag}.nwk"), write_text(&nwk_path, &newick)?);

    if cfg.analysis.pca {
        let proj = pca_project(&emb.rows, 2)?;
        let mut out = String::from("sub,basic,pc1,pc2\n");
        for (i, row) in proj.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                taxonomy.subs()[emb.sub_labels[i]],
                taxonomy.basics()[emb.basic_labels[i]],
                row[0],
                row[1]
            ));
        }
        let pca_path = cfg.out_dir.join(format!("pca_{tag}.csv"));
        files.insert(format!("pca_{tag}.csv"), write_text(&pca_path, &out)?);
    }

    let purity = PurityReport {
        basic: PurityCut {
            k: taxonomy.n_basics(),
            purity: cluster_purity(
                &cut_tree(&dendrogram, taxonomy.n_basics())?,
                &emb.basic_labels,
            )?,
        },
        sub: PurityCut {
            k: taxonomy.n_subs(),
            purity: cluster_purity(&cut_tree(&dendrogram, taxonomy.n_subs())?, &emb.sub_labels)?,
        },
    };
    let purity_path = cfg.out_dir.join(format!("purity_{tag}.json"));
    files.insert(format!("purity_{tag}.json"), write_json(&purity_path, &purity)?);

    if let Some(gold_path) = &cfg.analysis.gold {
        if !gold_path.exists() {
            return Err(Error::MissingGold);
        }
        let gold = GoldSimilarity::read_csv(gold_path, emb.len())?;
        let pred = sim.upper_triangle();
        let r2 = pearson_r2(&pred, &gold.ratings)?;
        let report = R2Report {
            r2,
            n_pairs: pred.len(),
            gold_file: gold_path.display().to_string(),
        };
        let r2_path = cfg.out_dir.join(format!("r2_{tag}.json"));
        files.insert(format!("r2_{tag}.json"), write_json(&r2_path, &report)?);
    }

    let mut seeds = BTreeMap::new();
    seeds.insert("split".to_string(), cfg.split_seed());
    write_manifest(cfg, &format!("analyze_{tag}"), seeds, files)?;
    println!(
        "analyzed {tag}: purity basic={:.4} sub={:.4} over {} held-out stimuli",
        purity.basic.purity,
        purity.sub.purity,
        emb.len()
    );
    Ok(())
}

fn generalization_tag(sharpened: bool) -> &'static str {
    if sharpened {
        "sharpened"
    } else {
        "unsharpened"
    }
}

/// Runs the configured generalization experiments on a checkpoint's
/// held-out embeddings and writes one JSON + CSV report per variant.
pub fn cmd_generalize(cfg: &ExperimentConfig, regime: Regime) -> Result<()> {
    let (taxonomy, test) = held_out(cfg)?;
    let network = load_checkpoint(cfg, regime)?;
    let pool = network.embed_dataset(&test)?;
    let tag = regime.as_str();
    let mut variants = Vec::new();
    if cfg.generalization.sharpened {
        variants.push(true);
    }
    if cfg.generalization.unsharpened {
        variants.push(false);
    }
    if variants.is_empty() {
        return Err(Error::InvalidConfig(
            "generalization requires at least one of sharpened/unsharpened".into(),
        ));
    }
    let mut files = BTreeMap::new();
    for sharpened in variants {
        let report = run_experiment(
            &pool,
            &taxonomy,
            cfg.generalization.trials_per_condition,
            sharpened,
            cfg.generalize_seed(regime),
        )?;
        let vtag = generalization_tag(sharpened);
        let json_name = format!("generalization_{tag}_{vtag}.json");
        let csv_name = format!("generalization_{tag}_{vtag}.csv");
        files.insert(
            json_name.clone(),
            write_json(&cfg.out_dir.join(&json_name), &report.rows)?,
        );
        files.insert(
            csv_name.clone(),
            write_text(&cfg.out_dir.join(&csv_name), &report.to_csv())?,
        );
    }
    let mut seeds = BTreeMap::new();
    seeds.insert("split".to_string(), cfg.split_seed());
    seeds.insert("generalize".to_string(), cfg.generalize_seed(regime));
    write_manifest(cfg, &format!("generalize_{tag}"), seeds, files)?;
    println!(
        "generalization report(s) for {tag} written to {}",
        cfg.out_dir.display()
    );
    Ok(())
}

fn push_missing_note(notes: &mut Vec<String>, regime: Regime, what: &str) {
    notes.push(format!(
        "- `{}`: no {what} artifact found; column omitted.",
        regime.as_str()
    ));
}

/// Cross-regime Markdown summary of whatever artifacts exist.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let mut purities: BTreeMap<&'static str, PurityReport> = BTreeMap::new();
    let mut r2s: BTreeMap<&'static str, R2Report> = BTreeMap::new();
    let mut gens: BTreeMap<(&'static str, bool), GeneralizationReport> = BTreeMap::new();
    let mut notes: Vec<String> = Vec::new();

    for regime in Regime::ALL {
        let tag = regime.as_str();
        let purity_path = cfg.out_dir.join(format!("purity_{tag}.json"));
        if purity_path.exists() {
            purities.insert(tag, read_json(&purity_path)?);
        } else {
            push_missing_note(&mut notes, regime, "purity");
        }
        let r2_path = cfg.out_dir.join(format!("r2_{tag}.json"));
        if r2_path.exists() {
            r2s.insert(tag, read_json(&r2_path)?);
        }
        for sharpened in [true, false] {
            let path = cfg.out_dir.join(format!(
                "generalization_{tag}_{}.json",
                generalization_tag(sharpened)
            ));
            if path.exists() {
                let rows = read_json(&path)?;
                gens.insert((tag, sharpened), GeneralizationReport { rows });
            }
        }
    }
    if purities.is_empty() && gens.is_empty() {
        return Err(Error::parse(
            cfg.out_dir.display().to_string(),
            "no analysis artifacts found for any regime; run `analyze` or `generalize` first",
        ));
    }

    let mut md = String::new();
    md.push_str("# Experiment report\n\n");
    md.push_str(&format!("- config hash: `{}`\n", cfg.config_hash()));
    md.push_str(&format!("- master seed: `{}`\n", cfg.master_seed));
    md.push_str(&format!(
        "- seeds: split=`{}`, datagen=`{}`\n\n",
        cfg.split_seed(),
        cfg.datagen_seed()
    ));

    // Summary tables carry one column per analyzed model.
    let header_for = |present: &[Regime]| -> String {
        let mut h = String::from("| |");
        for r in present {
            h.push_str(&format!(" {} |", r.as_str()));
        }
        h.push_str("\n|---|");
        h.push_str(&"---|".repeat(present.len()));
        h.push('\n');
        h
    };

    if !purities.is_empty() {
        let present: Vec<Regime> = Regime::ALL
            .iter()
            .copied()
            .filter(|r| purities.contains_key(r.as_str()))
            .collect();
        md.push_str("## Cluster purity on held-out embeddings\n\n");
        md.push_str(&header_for(&present));
        for (label, pick) in [
            ("basic purity", true),
            ("sub purity", false),
        ] {
            md.push_str(&format!("| {label} |"));
            for r in &present {
                let p = &purities[r.as_str()];
                let cut = if pick { &p.basic } else { &p.sub };
                md.push_str(&format!(" {:.4} (k={}) |", cut.purity, cut.k));
            }
            md.push('\n');
        }
        md.push('\n');
    }

    if !r2s.is_empty() {
        let present: Vec<Regime> = Regime::ALL
            .iter()
            .copied()
            .filter(|r| r2s.contains_key(r.as_str()))
            .collect();
        md.push_str("## Variance explained in gold similarity ratings\n\n");
        md.push_str(&header_for(&present));
        md.push_str("| R^2 |");
        for r in &present {
            md.push_str(&format!(" {:.4} |", r2s[r.as_str()].r2));
        }
        md.push_str("\n| pairs |");
        for r in &present {
            md.push_str(&format!(" {} |", r2s[r.as_str()].n_pairs));
        }
        md.push_str("\n\n");
    }

    for sharpened in [true, false] {
        let present: Vec<Regime> = Regime::ALL
            .iter()
            .copied()
            .filter(|r| gens.contains_key(&(r.as_str(), sharpened)))
            .collect();
        if present.is_empty() {
            continue;
        }
        md.push_str(&format!(
            "## Generalization ({})\n\nMean max-normalized generalization probability per condition and match type.\n\n",
            generalization_tag(sharpened)
        ));
        md.push_str("| condition | match |");
        for r in &present {
            md.push_str(&format!(" {} |", r.as_str()));
        }
        md.push_str("\n|---|---|");
        md.push_str(&"---|".repeat(present.len()));
        md.push('\n');
        for cond in Condition::ALL {
            for mt in [MatchType::SubMatch, MatchType::BasicMatch] {
                md.push_str(&format!("| {} | {} |", cond.as_str(), mt.as_str()));
                for r in &present {
                    let report = &gens[&(r.as_str(), sharpened)];
                    md.push_str(&format!(" {:.4} |", report.row(cond, mt).mean));
                }
                md.push('\n');
            }
        }
        md.push('\n');
    }

    if !notes.is_empty() {
        md.push_str("## Notes\n\n");
        for note in &notes {
            md.push_str(note);
            md.push('\n');
        }
        md.push('\n');
    }

    let report_path = cfg.out_dir.join("report.md");
    let mut files = BTreeMap::new();
    files.insert("report.md".to_string(), write_text(&report_path, &md)?);
    write_manifest(cfg, "report", BTreeMap::new(), files)?;
    println!("report written to {}", report_path.display());
    Ok(())
}

//! Subcommand front-end for the hierarchy-adapted co-occurrence pipeline:
//! counting, the normalized statistic, kernel fitting, hierarchy
//! construction, subtree sampling, embeddings, alignment experiments,
//! concept diagnostics, and theorem verification.
//!
//! Exit codes: 0 on success, 1 on input error, 2 when a verification report
//! contains assumption violations.

mod config;
mod io;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use config::{override_field, Config};
use hiergram::concept::{
    estimate_concept_vector, innovation_cosine, select_training_subset, EmbeddingTable,
};
use hiergram::cooccur::{
    count_cooccurrence, generate_synthetic_counts, mstar_restricted, tokenize_corpus, Vocab,
};
use hiergram::fit::{binned_decay, fit_exponential, fit_power_law, lca_conditioned_decay, lca_table_csv, FittedKernel};
use hiergram::hierarchy::{
    build_arborescence, contract, count_binary_subtrees, enumerate_distance_pairs,
    parse_edge_list, sample_binary_subtree, sample_distance_pairs, ContractedHierarchy,
};
use hiergram::kernel::KernelSpec;
use hiergram::spectra::{
    alignment_area, build_embedding, sym_eig, topk_alignment, verify_ordering_closed_form,
};
use hiergram::sweep::{alignment_csv, area_csv, run_root_sweep, summarize, SweepConfig};
use hiergram::tree::{build_regular_tree, tree_distance_matrix, DistanceMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "hiergram", version, about = "Hierarchy-adapted spectral analysis of co-occurrence statistics")]
struct Cli {
    /// TOML configuration file; flags override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count windowed co-occurrence pairs over a corpus into a binary count file.
    Count {
        /// Plain-text corpus, one article per line.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory of files, one article each.
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        /// Vocabulary file, one token per line.
        #[arg(long)]
        vocab_file: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        min_article_tokens: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate synthetic counts with a planted distance kernel on a hierarchy.
    SynthCorpus {
        #[arg(long)]
        hierarchy: PathBuf,
        /// Kernel JSON file; alternatively give --alpha/--beta.
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Total pair events to draw.
        #[arg(long)]
        pairs: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Dense normalized-statistic view over a token subset.
    Mstar {
        #[arg(long)]
        counts: PathBuf,
        /// Token subset file, one per line, in output order.
        #[arg(long)]
        tokens: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Estimate the distance decay of the statistic and fit a parametric kernel.
    FitKernel {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        /// exponential | shifted_power_law
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        max_distance: Option<usize>,
        #[arg(long)]
        pairs_per_distance: Option<usize>,
        /// Enumerate every pair per distance instead of frontier sampling.
        #[arg(long)]
        all_pairs: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Fitted kernel JSON.
        #[arg(long, default_value = "fit_kernel.json")]
        kernel_out: PathBuf,
        /// Binned decay CSV (the distance-decay figure data).
        #[arg(long, default_value = "fig2_decay.csv")]
        decay_out: PathBuf,
    },
    /// Convert a child-parent edge list into a depth-maximizing arborescence.
    HierarchyBuild {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        root: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Contract an arborescence onto an eligible node set.
    HierarchyContract {
        #[arg(long)]
        arbor: PathBuf,
        /// Eligible node names, one per line.
        #[arg(long)]
        eligible: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Sample perfect binary subtrees uniformly over valid structures.
    SampleTrees {
        #[arg(long)]
        hierarchy: PathBuf,
        /// Restrict to one root (default: every eligible root).
        #[arg(long)]
        root: Option<String>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Build spectral embeddings from the normalized statistic.
    Embed {
        #[arg(long)]
        counts: PathBuf,
        /// Tokens to embed, one per line, in row order.
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Alignment of one tree's empirical Gram against the kernel Gram,
    /// with eigenvector exports.
    Align {
        #[arg(long)]
        emb: PathBuf,
        /// Tree node tokens in breadth-first order (a perfect binary tree).
        #[arg(long)]
        tree_nodes: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        #[arg(short, long, default_value = "fig3_eigvecs.json")]
        output: PathBuf,
    },
    /// The root-sweep experiment over every eligible root.
    RootSweep {
        #[arg(long)]
        hierarchy: PathBuf,
        /// Embedding file with one row per hierarchy node.
        #[arg(long)]
        emb: Option<PathBuf>,
        /// Count file; embeddings and (absent --kernel) the fitted kernel
        /// are derived from it.
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long)]
        trees_per_root: Option<usize>,
        #[arg(long)]
        baseline_repeats: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Center and whiten external embeddings (fit on all rows) first.
        #[arg(long)]
        whiten: bool,
        /// Control mode: re-shuffle the node-to-vector assignment per tree.
        #[arg(long)]
        shuffle_input: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Parent-child innovation cosines with a shuffled-parent baseline.
    ConceptDiag {
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        /// Center and whiten the embedding table (fit on all rows) first.
        #[arg(long)]
        whiten: bool,
        /// Training fraction per synset (1.0 uses complete descendant sets).
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long, default_value = "fig5_cosines.csv")]
        output: PathBuf,
    },
    /// Decay conditioned on lowest-common-ancestor depth over sampled trees.
    LcaDecay {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        trees_per_root: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long, default_value = "fig6_lca.csv")]
        output: PathBuf,
    },
    /// Verify the spectral-ordering theory for a kernel on a regular tree.
    VerifyTheory {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<std::process::ExitCode> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Count {
            corpus,
            corpus_dir,
            vocab_file,
            window,
            min_article_tokens,
            output,
        } => {
            override_field!(cfg, window: window, min_article_tokens: min_article_tokens);
            let vocab = Vocab::from_tokens(io::read_lines(&vocab_file)?)?;
            let articles = io::read_articles(corpus.as_deref(), corpus_dir.as_deref())?;
            let tokenized = tokenize_corpus(
                articles.iter().map(|s| s.as_str()),
                &vocab,
                cfg.min_article_tokens,
            );
            if tokenized.is_empty() {
                bail!(
                    "no article kept at least {} retained tokens",
                    cfg.min_article_tokens
                );
            }
            let stats = count_cooccurrence(&tokenized, cfg.window, &vocab)?;
            io::write_counts(&stats, &output)?;
            println!(
                "{}",
                serde_json::json!({
                    "config": cfg.json(),
                    "articles": tokenized.len(),
                    "nnz": stats.nnz(),
                    "total_mass": stats.total_mass(),
                    "output": output.display().to_string(),
                })
            );
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::SynthCorpus {
            hierarchy,
            kernel,
            alpha,
            beta,
            pairs,
            seed,
            output,
        } => {
            override_field!(cfg, master_seed: seed);
            let h = io::read_hierarchy(&hierarchy)?;
            let spec = match (kernel, alpha, beta) {
                (Some(path), None, None) => io::read_kernel(&path)?,
                (None, Some(a), Some(b)) => match cfg.kernel_family.as_str() {
                    "exponential" => KernelSpec::exponential(a, b),
                    "shifted_power_law" => KernelSpec::shifted_power_law(a, b),
                    other => bail!("unknown kernel family {other:?}"),
                },
                _ => bail!("give either --kernel or both --alpha and --beta"),
            };
            let n = h.len();
            let distances = DistanceMatrix::from_fn(n, |i, j| h.distance(i, j) as u32)?;
            let tokens: Vec<String> = (0..n).map(|i| h.name(i).to_string()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
            let stats = generate_synthetic_counts(
                &tokens,
                &distances,
                &spec,
                &vec![1.0; n],
                pairs,
                &mut rng,
            )?;
            io::write_counts(&stats, &output)?;
            println!(
                "{}",
                serde_json::json!({
                    "config": cfg.json(),
                    "kernel": spec,
                    "pairs": pairs,
                    "nodes": n,
                    "output": output.display().to_string(),
                })
            );
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::Mstar {
            counts,
            tokens,
            output,
        } => {
            let stats = io::read_counts(&counts)?;
            let subset = io::read_lines(&tokens)?;
            let view = mstar_restricted(&stats, &subset)?;
            let n = view.matrix.nrows();
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| view.matrix[(i, j)]).collect())
                .collect();
            let json = serde_json::json!({
                "config": cfg.json(),
                "tokens": view.tokens,
                "matrix": rows,
                "unseen_fraction": view.unseen_fraction,
            });
            std::fs::write(&output, serde_json::to_string_pretty(&json)?)?;
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::FitKernel {
            counts,
            hierarchy,
            family,
            max_distance,
            pairs_per_distance,
            all_pairs,
            seed,
            kernel_out,
            decay_out,
        } => {
            override_field!(
                cfg,
                kernel_family: family,
                max_distance: max_distance,
                pairs_per_distance: pairs_per_distance,
                master_seed: seed,
            );
            let stats = io::read_counts(&counts)?;
            let h = io::read_hierarchy(&hierarchy)?;
            let (fitted, bins) = fit_from_counts(&stats, &h, &cfg, all_pairs)?;
            std::fs::write(&decay_out, io::csv_with_config(&cfg.echo_line(), &bins.to_csv()))?;
            let json = serde_json::json!({
                "config": cfg.json(),
                "kernel": fitted.spec,
                "beta_se": fitted.beta_se,
                "used_bins": fitted.used_bins,
                "log_residuals": fitted.residuals,
            });
            std::fs::write(&kernel_out, serde_json::to_string_pretty(&json)?)?;
            println!("{}", serde_json::to_string(&fitted.spec)?);
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::HierarchyBuild {
            edges,
            root,
            output,
        } => {
            let text = std::fs::read_to_string(&edges)
                .with_context(|| format!("reading {}", edges.display()))?;
            let edge_list = parse_edge_list(&text)?;
            let arbor = build_arborescence(&edge_list, &root)?;
            // arborescence rows in the contracted-hierarchy TSV shape
            let names: HashSet<String> =
                (0..arbor.len()).map(|i| arbor.name(i).to_string()).collect();
            let as_hierarchy = contract(&arbor, &names)?;
            std::fs::write(&output, as_hierarchy.to_tsv())?;
            println!(
                "{}",
                serde_json::json!({
                    "config": cfg.json(),
                    "nodes": as_hierarchy.len(),
                    "root": root,
                    "output": output.display().to_string(),
                })
            );
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::HierarchyContract {
            arbor,
            eligible,
            output,
        } => {
            let h = io::read_hierarchy(&arbor)?;
            // rebuild the arborescence from the TSV rows, then contract
            let mut edge_list = Vec::new();
            let mut root = None;
            for i in 0..h.len() {
                match h.parent(i) {
                    Some(p) => edge_list.push((h.name(i).to_string(), h.name(p).to_string())),
                    None => root = Some(h.name(i).to_string()),
                }
            }
            let root = root.context("arborescence has no root row")?;
            let arbor = build_arborescence(&edge_list, &root)?;
            let eligible: HashSet<String> = io::read_lines(&eligible)?.into_iter().collect();
            let contracted = contract(&arbor, &eligible)?;
            std::fs::write(&output, contracted.to_tsv())?;
            println!(
                "{}",
                serde_json::json!({
                    "config": cfg.json(),
                    "eligible": contracted.len(),
                    "output": output.display().to_string(),
                })
            );
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::SampleTrees {
            hierarchy,
            root,
            depth,
            count,
            seed,
            output,
        } => {
            override_field!(cfg, tree_depth: depth, trees_per_root: count, master_seed: seed);
            let h = io::read_hierarchy(&hierarchy)?;
            let table = count_binary_subtrees(&h, cfg.tree_depth);
            let roots: Vec<usize> = match &root {
                Some(name) => {
                    let id = h
                        .id(name)
                        .with_context(|| format!("root {name:?} not in hierarchy"))?;
                    vec![id]
                }
                None => (0..h.len())
                    .filter(|&u| table.count(u, cfg.tree_depth) >= 1.0)
                    .collect(),
            };
            if roots.is_empty() {
                bail!("no eligible root at depth {}", cfg.tree_depth);
            }
            let mut out_roots = Vec::new();
            for (ri, &r) in roots.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(hiergram::sweep::substream_seed(
                    cfg.master_seed,
                    ri as u64,
                    0,
                ));
                let available = table.count(r, cfg.tree_depth);
                let mut trees = Vec::new();
                for _ in 0..cfg.trees_per_root.min(1_000_000) {
                    let t = sample_binary_subtree(&h, &table, r, cfg.tree_depth, &mut rng)?;
                    trees.push(
                        t.iter().map(|&i| h.name(i).to_string()).collect::<Vec<_>>(),
                    );
                }
                out_roots.push(serde_json::json!({
                    "root": h.name(r),
                    "structures": available,
                    "trees": trees,
                }));
            }
            let count_table: serde_json::Map<String, serde_json::Value> = (0..h.len())
                .map(|u| {
                    let counts: Vec<f64> =
                        (0..=cfg.tree_depth).map(|l| table.count(u, l)).collect();
                    (h.name(u).to_string(), serde_json::json!(counts))
                })
                .collect();
            let json = serde_json::json!({
                "config": cfg.json(),
                "depth": cfg.tree_depth,
                "count_table": count_table,
                "roots": out_roots,
            });
            std::fs::write(&output, serde_json::to_string_pretty(&json)?)?;
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::Embed {
            counts,
            tokens,
            dim,
            output,
        } => {
            override_field!(cfg, embedding_dim: dim);
            let stats = io::read_counts(&counts)?;
            let subset = io::read_lines(&tokens)?;
            let view = mstar_restricted(&stats, &subset)?;
            let embedding = build_embedding(&view.matrix, cfg.embedding_dim)?;
            if embedding.no_positive_modes {
                bail!("statistic has no positive eigenmodes; nothing to embed");
            }
            let table = EmbeddingTable::new(subset, embedding.w.clone())?;
            let file = std::fs::File::create(&output)?;
            table.write_to(std::io::BufWriter::new(file))?;
            println!(
                "{}",
                serde_json::json!({
                    "config": cfg.json(),
                    "rows": table.len(),
                    "retained_modes": embedding.retained,
                    "output": output.display().to_string(),
                })
            );
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::Align {
            emb,
            tree_nodes,
            kernel,
            output,
        } => {
            let table = io::read_embedding(&emb)?;
            let nodes = io::read_lines(&tree_nodes)?;
            let n = nodes.len();
            if n == 0 {
                bail!("tree-nodes file is empty");
            }
            let depth = (n + 1).trailing_zeros() as usize - 1;
            if (1usize << (depth + 1)) - 1 != n {
                bail!("{n} nodes is not a perfect binary tree (expected 2^(L+1) - 1)");
            }
            let spec = io::read_kernel(&kernel)?;
            let shape = build_regular_tree(&vec![2; depth], depth)?;
            let gram_th = hiergram::kernel::kernel_gram(&spec, &tree_distance_matrix(&shape))?;
            let rows = table.rows_of(&nodes)?;
            let gram_emp = &rows * rows.transpose();
            let curve = topk_alignment(&gram_emp, &gram_th, n)?;
            let area = alignment_area(&curve.g, n);
            let eig_emp = sym_eig(&gram_emp)?;
            let eig_th = sym_eig(&gram_th)?;
            let vectors = |e: &hiergram::spectra::EigenSystem| -> Vec<Vec<f64>> {
                (0..n)
                    .map(|k| e.vectors.column(k).iter().copied().collect())
                    .collect()
            };
            let json = serde_json::json!({
                "config": cfg.json(),
                "nodes": nodes,
                "kernel": spec,
                "alignment": { "g": curve.g, "area": area,
                               "gaps_empirical": curve.gaps_first,
                               "gaps_theory": curve.gaps_second },
                "empirical": { "eigenvalues": eig_emp.values, "eigenvectors": vectors(&eig_emp) },
                "theory": { "eigenvalues": eig_th.values, "eigenvectors": vectors(&eig_th) },
            });
            std::fs::write(&output, serde_json::to_string_pretty(&json)?)?;
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::RootSweep {
            hierarchy,
            emb,
            counts,
            kernel,
            trees_per_root,
            baseline_repeats,
            depth,
            seed,
            whiten,
            shuffle_input,
            out_dir,
        } => {
            override_field!(
                cfg,
                trees_per_root: trees_per_root,
                baseline_repeats: baseline_repeats,
                tree_depth: depth,
                master_seed: seed,
            );
            let h = io::read_hierarchy(&hierarchy)?;
            let names: Vec<String> = (0..h.len()).map(|i| h.name(i).to_string()).collect();

            let (rows, fitted_spec): (DMatrix<f64>, Option<KernelSpec>) =
                match (&emb, &counts) {
                    (Some(path), _) => {
                        let mut table = io::read_embedding(path)?;
                        if whiten {
                            table = hiergram::concept::center_whiten(&table)?.0;
                        }
                        (table.rows_of(&names)?, None)
                    }
                    (None, Some(path)) => {
                        let stats = io::read_counts(path)?;
                        let view = mstar_restricted(&stats, &names)?;
                        let embedding = build_embedding(&view.matrix, cfg.embedding_dim)?;
                        let fitted = match kernel {
                            Some(_) => None,
                            None => Some(fit_from_counts(&stats, &h, &cfg, false)?.0.spec),
                        };
                        (embedding.w, fitted)
                    }
                    (None, None) => bail!("give --emb or --counts"),
                };
            let spec = match (&kernel, fitted_spec) {
                (Some(path), _) => io::read_kernel(path)?,
                (None, Some(spec)) => spec,
                (None, None) => bail!("give --kernel when embeddings come from --emb"),
            };

            let sweep_config = SweepConfig {
                master_seed: cfg.master_seed,
                trees_per_root: cfg.trees_per_root,
                tree_depth: cfg.tree_depth,
                baseline_repeats: cfg.baseline_repeats,
                shuffle_input,
            };
            let report = run_root_sweep(&h, &rows, &spec, &sweep_config)?;
            let summary = summarize(&report);
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(
                out_dir.join("fig4_alignment.csv"),
                io::csv_with_config(&cfg.echo_line(), &alignment_csv(&report)),
            )?;
            std::fs::write(
                out_dir.join("fig4_areas.csv"),
                io::csv_with_config(&cfg.echo_line(), &area_csv(&report)),
            )?;
            let json = serde_json::json!({
                "config": cfg.json(),
                "kernel": spec,
                "shuffle_input": shuffle_input,
                "summary": summary,
            });
            std::fs::write(
                out_dir.join("sweep_summary.json"),
                serde_json::to_string_pretty(&json)?,
            )?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::ConceptDiag {
            emb,
            hierarchy,
            whiten,
            train_fraction,
            repeats,
            seed,
            output,
        } => {
            override_field!(cfg, train_fraction: train_fraction, master_seed: seed);
            let mut table = io::read_embedding(&emb)?;
            if whiten {
                table = hiergram::concept::center_whiten(&table)?.0;
            }
            let h = io::read_hierarchy(&hierarchy)?;
            let repeats = repeats.unwrap_or(20);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
            let mut csv = String::from("repeat,child,parent,kind,cosine\n");
            let mut rows_written = 0usize;
            for rep in 0..repeats {
                let mut concepts: Vec<Option<hiergram::concept::ConceptVector>> =
                    vec![None; h.len()];
                for u in 0..h.len() {
                    let desc: Vec<String> = h
                        .descendants(u)
                        .into_iter()
                        .map(|i| h.name(i).to_string())
                        .collect();
                    let rows = match table.rows_of(&desc) {
                        Ok(rows) => rows,
                        Err(_) => continue, // synset has tokens outside the embedding
                    };
                    if rows.nrows() < 2 {
                        continue;
                    }
                    let (train, _) =
                        select_training_subset(rows.nrows(), cfg.train_fraction, &mut rng);
                    let mut train_rows = DMatrix::zeros(train.len(), rows.ncols());
                    for (r, &idx) in train.iter().enumerate() {
                        train_rows.set_row(r, &rows.row(idx));
                    }
                    if let Ok(c) = estimate_concept_vector(h.name(u), &train_rows) {
                        if !c.degenerate {
                            concepts[u] = Some(c);
                        }
                    }
                }
                let have: Vec<usize> = (0..h.len()).filter(|&u| concepts[u].is_some()).collect();
                for &w in &have {
                    let Some(p) = h.parent(w) else { continue };
                    let (Some(cw), Some(cp)) = (&concepts[w], &concepts[p]) else {
                        continue;
                    };
                    let cos = innovation_cosine(cw, cp)?;
                    csv.push_str(&format!(
                        "{rep},{},{},true,{cos}\n",
                        h.name(w),
                        h.name(p)
                    ));
                    // shuffled parent: a random other concept-bearing node
                    let q = loop {
                        let q = have[rng.gen_range(0..have.len())];
                        if q != w {
                            break q;
                        }
                    };
                    let cos = innovation_cosine(cw, concepts[q].as_ref().unwrap())?;
                    csv.push_str(&format!(
                        "{rep},{},{},shuffled,{cos}\n",
                        h.name(w),
                        h.name(q)
                    ));
                    rows_written += 2;
                }
            }
            if rows_written == 0 {
                bail!("no parent-child pair had estimable concepts");
            }
            std::fs::write(&output, io::csv_with_config(&cfg.echo_line(), &csv))?;
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::LcaDecay {
            counts,
            hierarchy,
            depth,
            trees_per_root,
            seed,
            output,
        } => {
            override_field!(cfg, tree_depth: depth, trees_per_root: trees_per_root, master_seed: seed);
            let stats = io::read_counts(&counts)?;
            let h = io::read_hierarchy(&hierarchy)?;
            let ids: Vec<u32> = (0..h.len())
                .map(|i| {
                    stats
                        .vocab()
                        .id(h.name(i))
                        .with_context(|| format!("token {:?} absent from counts", h.name(i)))
                })
                .collect::<Result<_>>()?;
            let table = count_binary_subtrees(&h, cfg.tree_depth);
            let mut trees_by_root = Vec::new();
            for r in 0..h.len() {
                if table.count(r, cfg.tree_depth) < 1.0 {
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(hiergram::sweep::substream_seed(
                    cfg.master_seed,
                    r as u64,
                    1,
                ));
                let trees: Vec<Vec<usize>> = (0..cfg.trees_per_root)
                    .map(|_| sample_binary_subtree(&h, &table, r, cfg.tree_depth, &mut rng))
                    .collect::<std::result::Result<_, _>>()?;
                trees_by_root.push((r, trees));
            }
            if trees_by_root.is_empty() {
                bail!("no eligible root at depth {}", cfg.tree_depth);
            }
            let strata = lca_conditioned_decay(&trees_by_root, cfg.tree_depth, |i, j| {
                stats.mstar(ids[i], ids[j]).unwrap_or(-2.0)
            });
            std::fs::write(&output, io::csv_with_config(&cfg.echo_line(), &lca_table_csv(&strata)))?;
            Ok(std::process::ExitCode::SUCCESS)
        }

        Command::VerifyTheory {
            kernel,
            branching,
            depth,
            output,
        } => {
            let spec = io::read_kernel(&kernel)?;
            let report = verify_ordering_closed_form(&spec, branching, depth)?;
            let mut lines = vec![
                ("perron-top", report.perron_top),
                ("scaling-leading-positive", report.scaling_leading_positive),
                ("split-leading-positive", report.split_leading_positive),
                ("split-entries-positive", report.split_entries_positive),
                ("cauchy-interlacing", report.interlacing),
                ("coarse-to-fine", report.coarse_to_fine),
            ];
            if let Some(r1) = &report.rank_one {
                lines.push(("rank-one-alternating-chain", r1.alternating_chain));
                lines.push(("corollary-placements", r1.corollary_placements));
                println!(
                    "rank-one-residual           {} (residual {:.3e})",
                    if r1.residual_pass { "PASS" } else { "FAIL" },
                    r1.residual
                );
            }
            for (name, check) in &lines {
                println!(
                    "{name:<27} {} (slack {:+.3e})",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.slack
                );
            }
            if let Some(path) = output {
                let json = serde_json::json!({
                    "config": cfg.json(),
                    "kernel": spec,
                    "branching": branching,
                    "depth": depth,
                    "report": report,
                });
                std::fs::write(&path, serde_json::to_string_pretty(&json)?)?;
            }
            if report.all_pass() {
                Ok(std::process::ExitCode::SUCCESS)
            } else {
                eprintln!("assumption violations detected");
                Ok(std::process::ExitCode::from(2))
            }
        }
    }
}

/// Distance-binned decay from counts over a hierarchy, then the configured
/// parametric fit.
fn fit_from_counts(
    stats: &hiergram::cooccur::CooccurrenceStats,
    h: &ContractedHierarchy,
    cfg: &Config,
    all_pairs: bool,
) -> Result<(FittedKernel, hiergram::fit::DecayBins)> {
    let ids: Vec<u32> = (0..h.len())
        .map(|i| {
            stats
                .vocab()
                .id(h.name(i))
                .with_context(|| format!("token {:?} absent from counts", h.name(i)))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let mut pairs = Vec::new();
    for d in 0..=cfg.max_distance {
        if all_pairs {
            pairs.extend(enumerate_distance_pairs(h, d));
        } else {
            match sample_distance_pairs(h, d, cfg.pairs_per_distance, &mut rng) {
                Ok(p) => pairs.extend(p),
                Err(hiergram::hierarchy::HierarchyError::EmptyDistance(_)) => {} // bin omitted
                Err(e) => return Err(e.into()),
            }
        }
    }
    let bins = binned_decay(&pairs, |i, j| stats.mstar(ids[i], ids[j]).unwrap_or(-2.0));
    let fitted = match cfg.kernel_family.as_str() {
        "exponential" => fit_exponential(&bins)?,
        "shifted_power_law" => fit_power_law(&bins)?,
        other => bail!("unknown kernel family {other:?}"),
    };
    Ok((fitted, bins))
}

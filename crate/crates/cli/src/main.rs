use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use hategraph::{Error, Result};

mod config;
mod stages;

use config::{Kind, Settings};

type StageFn = fn(&Settings) -> Result<()>;

const MODEL_KEYS: &[&str] = &[
    "hidden", "samples", "epochs", "batch", "lr", "relu", "normalize", "inference", "sage_seed",
    "class_weight", "adaboost_rounds", "gbt_trees", "gbt_depth", "gbt_lr",
];

struct Stage {
    name: &'static str,
    about: &'static str,
    keys: &'static [&'static str],
    run: StageFn,
}

const STAGES: &[Stage] = &[
    Stage {
        name: "synth",
        about: "Generate a planted-minority graph with profiles, labels, lexicon and word vectors",
        keys: &[
            "seed", "out", "nodes", "minority_fraction", "homophily", "mean_out_degree",
            "silent_fraction", "degree_exponent", "max_out_degree", "vocab_size", "vocab_overlap", "tweets_per_user",
            "tokens_per_tweet", "lexicon_rate", "lexicon_rate_majority", "activity_multiplier",
            "labeled", "vector_dim", "reference_date",
        ],
        run: stages::synth,
    },
    Stage {
        name: "ingest",
        about: "Validate edges and profiles and write the node index",
        keys: &["edges", "users", "out"],
        run: stages::ingest,
    },
    Stage {
        name: "crawl",
        about: "Sample a graph with a DURW random walk and estimate its out-degree distribution",
        keys: &["graph", "budget", "jump_weight", "seed", "out"],
        run: stages::crawl,
    },
    Stage {
        name: "diffuse",
        about: "Seed beliefs from the lexicon and run DeGroot diffusion",
        keys: &["edges", "users", "lexicon", "steps", "clamp_seeds", "out"],
        run: stages::diffuse,
    },
    Stage {
        name: "stratify",
        about: "Select up to a capped number of users per belief stratum",
        keys: &["beliefs", "strata_cap", "seed", "out"],
        run: stages::stratify,
    },
    Stage {
        name: "annotate-export",
        about: "Write an annotation sheet for the selected users",
        keys: &["selected", "users", "annotators", "out"],
        run: stages::annotate_export,
    },
    Stage {
        name: "annotate-import",
        about: "Resolve annotator votes into labels by majority",
        keys: &["annotations", "edges", "users", "out"],
        run: stages::annotate_import,
    },
    Stage {
        name: "features",
        about: "Extract activity, spam, centrality and word-vector features",
        keys: &["edges", "users", "vectors", "reference_date", "bc_sources", "seed", "out"],
        run: stages::features,
    },
    Stage {
        name: "stats",
        about: "Compare user groups, tabulate edge mixing and write plot data",
        keys: &[
            "edges", "feature_file", "labels", "suspended", "users", "categories", "valence",
            "badwords", "out",
        ],
        run: stages::stats,
    },
    Stage {
        name: "train",
        about: "Train one model on every labeled user of a task",
        keys: &["edges", "feature_file", "labels", "suspended", "task", "model_type", "features", "seed", "out"],
        run: stages::train,
    },
    Stage {
        name: "evaluate",
        about: "Cross-validate models on feature sets and write the report",
        keys: &[
            "edges", "feature_file", "labels", "suspended", "task", "models", "features", "folds",
            "threshold", "seed", "out",
        ],
        run: stages::evaluate,
    },
];

fn flag_arg(key: &'static str) -> Arg {
    let k = config::key(key).expect("stage keys are declared");
    let arg = Arg::new(key).long(key.replace('_', "-")).help(k.help);
    match k.kind {
        Kind::Value => arg.value_name(key.to_ascii_uppercase()).num_args(1),
        Kind::Flag => arg.action(ArgAction::SetTrue),
    }
}

fn command() -> Command {
    let mut cmd = Command::new("hategraph")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Retweet-graph sampling, belief diffusion, characterization and detection of hateful users")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("Flat `key = value` settings; command-line flags take precedence"),
        )
        .arg(flag_arg("threads").global(true))
        .arg(flag_arg("dir").global(true))
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("Log progress to stderr"),
        );
    for stage in STAGES {
        let mut sub = Command::new(stage.name).about(stage.about);
        for key in stage.keys {
            sub = sub.arg(flag_arg(key));
        }
        if stage.keys.contains(&"models") || stage.name == "train" {
            for key in MODEL_KEYS {
                sub = sub.arg(flag_arg(key));
            }
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn explicit(m: &ArgMatches, ids: &[&str]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for &id in ids {
        if m.value_source(id) != Some(clap::parser::ValueSource::CommandLine) {
            continue;
        }
        let v = match config::key(id).map(|k| k.kind) {
            Some(Kind::Flag) => "true".to_owned(),
            _ => m.get_one::<String>(id).cloned().unwrap_or_default(),
        };
        out.insert(id.to_owned(), v);
    }
    out
}

fn run(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let stage = STAGES.iter().find(|s| s.name == name).expect("registered stage");
    let file = match sub.get_one::<String>("config") {
        Some(p) => config::load_config(&PathBuf::from(p))?,
        None => BTreeMap::new(),
    };
    let mut ids: Vec<&str> = vec!["threads", "dir"];
    ids.extend(stage.keys);
    if stage.keys.contains(&"models") || stage.name == "train" {
        ids.extend(MODEL_KEYS);
    }
    let settings = Settings::new(file, explicit(sub, &ids));
    let threads: usize = settings.threads()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    (stage.run)(&settings)
}

fn main() -> ExitCode {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if matches.get_flag("verbose") { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        command().debug_assert();
    }

    #[test]
    fn every_key_is_reachable_from_some_stage() {
        for k in config::KEYS {
            let used = ["threads", "dir"].contains(&k.name)
                || MODEL_KEYS.contains(&k.name)
                || STAGES.iter().any(|s| s.keys.contains(&k.name));
            assert!(used, "{} is not a flag of any stage", k.name);
        }
    }

    #[test]
    fn flags_become_settings() {
        let m = command()
            .try_get_matches_from(["hategraph", "diffuse", "--steps", "3", "--clamp-seeds"])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let flags = explicit(sub, &["steps", "clamp_seeds", "out"]);
        assert_eq!(flags["steps"], "3");
        assert_eq!(flags["clamp_seeds"], "true");
        assert!(!flags.contains_key("out"));
    }
}

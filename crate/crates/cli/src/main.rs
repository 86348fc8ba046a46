use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use survrad_cli::config::PipelineConfig;
use survrad_cli::error::{ErrorKind, Result, StageContext};
use survrad_cli::run;
use survrad_core::radiomics::Modality;

#[derive(Parser)]
#[command(
    name = "survrad",
    version,
    about = "Segmentation-guided recurrence-free-survival pipeline: node filtering, radiomics, Cox model building, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the JSON configuration.
#[derive(Args, Debug, Default)]
struct ConfigOverrides {
    /// Pipeline configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the cross-validation seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the node-distance threshold in millimeters
    #[arg(long = "d-max")]
    d_max: Option<f64>,
    /// Override the number of inner cross-validation repeats
    #[arg(long)]
    repeats: Option<usize>,
    /// Override the output directory
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigOverrides {
    fn load(&self) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::from_file(&self.config).stage("config")?;
        if let Some(seed) = self.seed {
            config.cv.seed = seed;
        }
        if let Some(d_max) = self.d_max {
            config.d_max_mm = d_max;
        }
        if let Some(repeats) = self.repeats {
            config.cv.inner_repeats = repeats;
        }
        if let Some(output) = &self.output {
            config.output_dir = output.clone();
        }
        config.validate_settings().stage("config")?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from the configuration file
    Run {
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Generate a synthetic cohort in the pipeline's file formats
    Simulate {
        /// Output directory for labels.csv and features_<modality>.csv
        #[arg(long)]
        output: PathBuf,
        /// Cohort size
        #[arg(long, default_value_t = 400)]
        patients: usize,
        /// True coefficients of the informative features, comma-separated
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.7,0.5")]
        betas: Vec<f64>,
        /// Number of pure-noise features per modality
        #[arg(long, default_value_t = 50)]
        noise: usize,
        /// Target censored fraction in [0, 1)
        #[arg(long, default_value_t = 0.25)]
        censoring: f64,
        /// Baseline events per month
        #[arg(long = "baseline-rate", default_value_t = 0.08)]
        baseline_rate: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Modalities to generate, comma-separated (clinical, ct, pet)
        #[arg(long, value_delimiter = ',', default_value = "clinical,ct,pet")]
        modalities: Vec<String>,
    },
    /// Filter distant lymph-node components out of segmentation masks
    Postprocess {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Directory holding <id>_mask.nii inputs
        #[arg(long)]
        volumes: PathBuf,
        /// Directory for filtered masks, node stats, and the removal report
        #[arg(long = "output-dir")]
        output_dir: PathBuf,
    },
    /// Extract CT and PET radiomics tables from volumes
    Features {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Directory holding <id>_ct.nii and <id>_pet.nii scans
        #[arg(long)]
        volumes: PathBuf,
        /// Directory holding the (post-processed) <id>_mask.nii masks
        #[arg(long)]
        masks: PathBuf,
        /// Directory for feature tables
        #[arg(long = "output-dir")]
        output_dir: PathBuf,
    },
    /// Train the survival models from prepared tables (or clinical data)
    Fit {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Clinical schema CSV (replaces inputs.clinical_csv)
        #[arg(long)]
        clinical: Option<PathBuf>,
        /// Node statistics CSV from the postprocess stage
        #[arg(long = "node-stats")]
        node_stats: Option<PathBuf>,
        /// Outcome labels CSV (replaces inputs.labels_csv)
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Clinical feature-table CSV (replaces inputs.clinical_features_csv)
        #[arg(long = "clinical-features")]
        clinical_features: Option<PathBuf>,
        /// CT feature-table CSV
        #[arg(long = "ct-features")]
        ct_features: Option<PathBuf>,
        /// PET feature-table CSV
        #[arg(long = "pet-features")]
        pet_features: Option<PathBuf>,
    },
    /// Concordance of a risk-score column against outcome labels
    Evaluate {
        /// Risk-score CSV produced by run/fit
        #[arg(long)]
        risk: PathBuf,
        /// Outcome labels CSV
        #[arg(long)]
        labels: PathBuf,
        /// Risk column: clinical, ct, pet, or fused
        #[arg(long, default_value = "fused")]
        column: String,
        /// Report JSON destination
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Kaplan–Meier curves and log-rank test for two labeled group files
    Km {
        #[arg(long = "group-a")]
        group_a: PathBuf,
        #[arg(long = "group-b")]
        group_b: PathBuf,
        /// Report JSON destination
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_modalities(raw: &[String]) -> Result<Vec<Modality>> {
    raw.iter()
        .map(|m| match m.to_lowercase().as_str() {
            "clinical" => Ok(Modality::Clinical),
            "ct" => Ok(Modality::Ct),
            "pet" => Ok(Modality::Pet),
            other => Err(ErrorKind::Config(format!(
                "unknown modality '{other}' (expected clinical, ct, pet)"
            )))
            .stage("simulate"),
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { overrides } => {
            let config = overrides.load()?;
            let report = run::run_pipeline(&config)?;
            println!(
                "run complete: fused C-index {}, outputs in {}",
                report
                    .fused_c_index
                    .map_or("n/a".to_string(), |c| format!("{c:.5}")),
                config.output_dir.display()
            );
        }
        Command::Simulate {
            output,
            patients,
            betas,
            noise,
            censoring,
            baseline_rate,
            seed,
            modalities,
        } => {
            let params = run::SimulateParams {
                patients,
                betas,
                noise_features: noise,
                censoring_rate: censoring,
                baseline_rate,
                seed,
                modalities: parse_modalities(&modalities)?,
            };
            let written = run::simulate_stage(&params, &output)?;
            println!("simulated {} patients; wrote {} files", patients, written.len());
        }
        Command::Postprocess { overrides, volumes, output_dir } => {
            let config = overrides.load()?;
            let report = run::postprocess_stage(&config, &volumes, &output_dir)?;
            let removed: usize = report
                .patients
                .iter()
                .map(|p| p.filter.entries.iter().filter(|e| e.removed).count())
                .sum();
            println!(
                "postprocessed {} patients; removed {} node components (d_max {} mm)",
                report.patients.len(),
                removed,
                report.d_max_mm
            );
        }
        Command::Features { overrides, volumes, masks, output_dir } => {
            let config = overrides.load()?;
            let written = run::features_stage(&config, &volumes, &masks, &output_dir)?;
            println!("wrote {} feature tables to {}", written.len(), output_dir.display());
        }
        Command::Fit {
            overrides,
            clinical,
            node_stats,
            labels,
            clinical_features,
            ct_features,
            pet_features,
        } => {
            let mut config = overrides.load()?;
            if clinical.is_some() || labels.is_some() {
                // input overrides replace the configured sources outright
                config.inputs.clinical_csv = clinical;
                config.inputs.labels_csv = labels;
                config.inputs.clinical_features_csv = clinical_features;
                config.inputs.node_stats_csv = node_stats;
                config.inputs.volumes_dir = None;
                config.inputs.reference_masks_dir = None;
                config.inputs.ct_features_csv = ct_features;
                config.inputs.pet_features_csv = pet_features;
            }
            let report = run::run_pipeline(&config)?;
            println!(
                "fit complete: fused C-index {}, outputs in {}",
                report
                    .fused_c_index
                    .map_or("n/a".to_string(), |c| format!("{c:.5}")),
                config.output_dir.display()
            );
        }
        Command::Evaluate { risk, labels, column, output } => {
            let report = run::evaluate_stage(&risk, &labels, &column, output.as_deref())?;
            println!(
                "C-index ({}) = {:.5} over {} scored of {} patients",
                report.column, report.c_index, report.n_scored, report.n
            );
        }
        Command::Km { group_a, group_b, output } => {
            let report = run::km_stage(&group_a, &group_b, output.as_deref())?;
            match &report.logrank {
                Some(lr) => println!(
                    "log-rank chi-square {:.4}, p {:.6}, -log2(p) {:.4}",
                    lr.chi_square, lr.p_value, lr.neg_log2_p
                ),
                None => println!("log-rank degenerate: no comparable events across groups"),
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

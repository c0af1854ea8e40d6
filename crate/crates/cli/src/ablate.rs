use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dociq::model::Ablations;
use dociq::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::train::{train_into, RunReport};
use crate::TrainOpts;

pub const TABLE_MD: &str = "ablation.md";
pub const TABLE_JSON: &str = "ablation.json";

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub report: RunReport,
}

/// Markdown table with SRCC/PLCC per dimension and the averages.
pub fn comparison_table(rows: &[AblationRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let dims: Vec<&str> = first.report.test.dimensions.iter().map(|d| d.dimension.as_str()).collect();
    let mut s = String::from("| config | params |");
    for d in &dims {
        s += &format!(" {d} SRCC | {d} PLCC |");
    }
    s += " avg SRCC | avg PLCC |\n|---|---:|";
    s += &"---:|---:|".repeat(dims.len() + 1);
    s.push('\n');
    for r in rows {
        s += &format!("| {} | {} |", r.name, r.report.param_count);
        for m in &r.report.test.dimensions {
            s += &format!(" {:.4} | {:.4} |", m.srcc, m.plcc);
        }
        let a = r.report.test.average;
        s += &format!(" {:.4} | {:.4} |\n", a.srcc, a.plcc);
    }
    s
}

/// Train every ablation row with otherwise identical settings.
pub fn ablate_into(data: &Path, base: &TrainConfig, out: &Path) -> anyhow::Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, ablations) in Ablations::table_rows() {
        let cfg = TrainConfig {
            ablations,
            ..base.clone()
        };
        log::info!("ablation {name}");
        let report = train_into(data, &cfg, &out.join(name.replace('+', "_")))?;
        rows.push(AblationRow {
            name: name.to_string(),
            report,
        });
    }
    fs::write(out.join(TABLE_MD), comparison_table(&rows))?;
    fs::write(out.join(TABLE_JSON), serde_json::to_string_pretty(&rows)?)?;
    Ok(rows)
}

pub fn run(args: &AblateArgs) -> anyhow::Result<()> {
    let cfg = args.opts.resolve()?;
    let rows = ablate_into(&args.opts.data, &cfg, &args.out)?;
    print!("{}", comparison_table(&rows));
    Ok(())
}

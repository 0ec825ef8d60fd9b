use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use manygoals::eval::{
    compare_runs, evaluate_mastery, histogram_of_counts, holdout_split, read_metrics, write_comparison,
    write_histogram, write_metrics, MetricRow, UvfaPolicy,
};
use manygoals::maintask::{
    finetune_a2c, pretrain_many_goals, pretrain_reward_prediction, train_aux, A2cConfig, A2cRun, MainTaskSpec,
    PretrainConfig, Pretrained,
};
use manygoals::mastery::{MasteryConfig, MasteryTrainer};
use manygoals::numerics::{read_checkpoint, write_checkpoint};
use manygoals::uvfa::{NetConfig, UvfaNet};
use manygoals::{Cell, GoalSelection, Layer, LayerSpec, Layout, SeedTree, World};

use crate::config::{PretrainKind, RunConfig};
use crate::manifest::{audit_run, Manifest, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Enumerate,
    Mastery,
    Holdout,
    Pretrain,
    Finetune,
    Aux,
    Eval,
    Compare,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Enumerate,
        Command::Mastery,
        Command::Holdout,
        Command::Pretrain,
        Command::Finetune,
        Command::Aux,
        Command::Eval,
        Command::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Enumerate => "enumerate",
            Command::Mastery => "mastery",
            Command::Holdout => "holdout",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Aux => "aux",
            Command::Eval => "eval",
            Command::Compare => "compare",
        }
    }

    /// Training commands leave a final checkpoint behind.
    pub fn writes_checkpoint(self) -> bool {
        matches!(
            self,
            Command::Mastery | Command::Holdout | Command::Pretrain | Command::Finetune | Command::Aux
        )
    }
}

/// Where a run writes when `--out` is not given.
pub fn default_run_dir(root: &Path, cmd: Command, seed: u64) -> PathBuf {
    root.join(format!("{}-seed{seed}", cmd.name()))
}

/// What a finished run reports on stdout.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub lines: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    manifest: Manifest,
    lines: Vec<String>,
}

impl Ctx<'_> {
    fn say(&mut self, line: String) {
        log::info!("{line}");
        self.lines.push(line);
    }

    fn write_metrics(&self, rows: &[MetricRow]) -> Result<()> {
        let f = File::create(self.dir.join(METRICS_FILE))?;
        write_metrics(BufWriter::new(f), rows)?;
        Ok(())
    }

    fn write_checkpoint(&self, layers: &[Layer]) -> Result<()> {
        let mut f = BufWriter::new(File::create(self.dir.join(CHECKPOINT_FILE))?);
        write_checkpoint(&mut f, layers)?;
        Ok(())
    }
}

/// Runs `cmd` into `dir`: echoes the config, runs, writes outputs and a
/// manifest, then audits the directory.
pub fn run(cmd: Command, cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let config_text = cfg.to_text();
    fs::write(dir.join(CONFIG_FILE), &config_text)?;
    let mut ctx = Ctx {
        cfg,
        dir,
        manifest: Manifest::new(cmd.name()),
        lines: Vec::new(),
    };
    ctx.manifest.input("config", config_text.as_bytes());
    match cmd {
        Command::Enumerate => enumerate(&mut ctx)?,
        Command::Mastery => mastery(&mut ctx, false)?,
        Command::Holdout => mastery(&mut ctx, true)?,
        Command::Pretrain => pretrain(&mut ctx)?,
        Command::Finetune => actor_critic(&mut ctx, false)?,
        Command::Aux => actor_critic(&mut ctx, true)?,
        Command::Eval => eval(&mut ctx)?,
        Command::Compare => compare(&mut ctx)?,
    }
    ctx.manifest.seal(dir)?;
    audit_run(dir, cmd.writes_checkpoint())?;
    Ok(RunSummary {
        dir: dir.to_owned(),
        lines: ctx.lines,
    })
}

fn load_world(ctx: &mut Ctx<'_>) -> Result<World> {
    let name = ctx.cfg.layout.as_str();
    let layout = match name {
        "compact" => Layout::compact(),
        "standard" => Layout::standard(),
        "tiny" => Layout::tiny(),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading layout {path}"))?;
            Layout::parse(&text).with_context(|| format!("parsing layout {path}"))?
        }
    };
    ctx.manifest.input("layout", layout.to_text().as_bytes());
    Ok(World::new(layout))
}

fn mastery_config(cfg: &RunConfig) -> MasteryConfig {
    MasteryConfig {
        total_steps: cfg.total_steps,
        warmup_steps: cfg.warmup_steps,
        episode_cap: cfg.episode_cap,
        anneal_steps: cfg.anneal_steps,
        final_epsilon: cfg.final_epsilon,
        batch_transitions: cfg.batch_transitions,
        batch_goals: cfg.batch_goals,
        selection: cfg.selection,
        learner: cfg.learner,
        target_sync: cfg.target_sync,
        eval_period: cfg.eval_period,
        eval_steps: cfg.eval_steps,
        replay_capacity: cfg.replay_capacity,
        step_size: cfg.step_size,
        hidden: cfg.hidden,
        embed: cfg.embed,
        window: cfg.window,
        seed: cfg.seed,
    }
}

fn a2c_config(cfg: &RunConfig) -> A2cConfig {
    A2cConfig {
        total_steps: cfg.total_steps,
        rollout: cfg.rollout,
        workers: cfg.workers,
        value_weight: cfg.value_weight,
        entropy_weight: cfg.entropy_weight,
        aux_weight: cfg.aux_weight,
        rp_weight: cfg.rp_weight,
        step_size: cfg.step_size,
        hidden: cfg.hidden,
        embed: cfg.embed,
        kbest_capacity: cfg.kbest_capacity,
        target_sync: cfg.target_sync,
        eval_period: cfg.eval_period,
        final_fraction: cfg.final_fraction,
        seed: cfg.seed,
    }
}

fn main_task(cfg: &RunConfig) -> MainTaskSpec {
    MainTaskSpec::new(Cell::new(cfg.target_row, cfg.target_col)).with_start(cfg.task_start)
}

fn enumerate(ctx: &mut Ctx<'_>) -> Result<()> {
    let world = load_world(ctx)?;
    let states = world.feasible_states();
    let mut w = csv::Writer::from_path(ctx.dir.join("states.csv"))?;
    w.write_record(["id", "agent_row", "agent_col", "block_row", "block_col", "door_open"])?;
    for (id, s) in states.iter().enumerate() {
        w.write_record([
            id.to_string(),
            s.agent_cell.row.to_string(),
            s.agent_cell.col.to_string(),
            s.block_cell.row.to_string(),
            s.block_cell.col.to_string(),
            u8::from(s.door_open).to_string(),
        ])?;
    }
    w.flush()?;
    let n = states.len();
    ctx.write_metrics(&[MetricRow::new(0, "n_feasible", n as f64, ctx.cfg.seed, "enumerate")])?;
    ctx.say(format!("N_feasible = {n}"));
    Ok(())
}

fn mastery(ctx: &mut Ctx<'_>, holdout: bool) -> Result<()> {
    let world = load_world(ctx)?;
    let mcfg = mastery_config(ctx.cfg);
    let split = if holdout {
        let goals: Vec<usize> = (0..world.feasible_states().len()).collect();
        let seed = SeedTree::new(ctx.cfg.seed).child(0x401d).seed();
        let split = holdout_split(&goals, ctx.cfg.holdout_fraction, seed)?;
        let mut w = csv::Writer::from_path(ctx.dir.join("heldout.csv"))?;
        w.write_record(["goal_state"])?;
        for g in &split.heldout {
            w.write_record([g.to_string()])?;
        }
        w.flush()?;
        Some(split)
    } else {
        None
    };
    let trainer = MasteryTrainer::new(&world, mcfg.clone(), split.clone())?;
    let run = trainer.train()?;
    if let Some(split) = &split {
        let leaks = run.holdout_violations(split);
        if !leaks.is_empty() {
            bail!("{} held-out goals were trained on", leaks.len());
        }
        ctx.say(format!(
            "holdout audit: 0 violations over {} held-out goals",
            split.heldout.len()
        ));
    }
    ctx.write_metrics(&run.metrics)?;
    ctx.write_checkpoint(run.agent.online.layers())?;
    let hist = histogram_of_counts(run.update_counts.iter().copied(), 10);
    write_histogram(BufWriter::new(File::create(ctx.dir.join("histogram.csv"))?), &hist)?;
    if mcfg.selection == GoalSelection::LearningProgress {
        let ids: Vec<usize> = (0..run.goals.len()).collect();
        let f = BufWriter::new(File::create(ctx.dir.join("priorities.csv"))?);
        run.stats.write_snapshot(f, &ids, mcfg.selection)?;
    }
    ctx.manifest.fact("env_steps", run.steps);
    ctx.manifest.fact("arm", mcfg.arm());
    for name in ["mastery", "heldout_mastery"] {
        if let Some(m) = run.metrics.iter().rev().find(|m| m.metric_name == name) {
            ctx.say(format!("{name} at step {}: {:.4}", m.step, m.value));
        }
    }
    ctx.say(format!(
        "{} steps, {} updates, {} goals",
        run.steps,
        run.updates,
        run.goals.len()
    ));
    Ok(())
}

fn pretrain(ctx: &mut Ctx<'_>) -> Result<()> {
    let world = load_world(ctx)?;
    let cfg = ctx.cfg;
    let (steps, layers, metrics) = match cfg.pretrain {
        PretrainKind::ManyGoals => {
            let mcfg = MasteryConfig {
                selection: GoalSelection::Uniform,
                ..mastery_config(cfg)
            };
            let (pre, run) = pretrain_many_goals(&world, &mcfg)?;
            (pre.steps, run.agent.online.into_layers(), run.metrics)
        }
        PretrainKind::RewardPrediction => {
            let pcfg = PretrainConfig {
                total_steps: cfg.total_steps,
                batch: cfg.batch_transitions,
                step_size: cfg.step_size,
                hidden: cfg.hidden,
                embed: cfg.embed,
                eval_period: cfg.eval_period,
                seed: cfg.seed,
            };
            let run = pretrain_reward_prediction(&world, &main_task(cfg), &pcfg)?;
            ctx.say(format!(
                "reward classes seen (zero, positive, negative): {:?}",
                run.seen
            ));
            (run.pretrained.steps, run.predictor.layers().to_vec(), run.metrics)
        }
    };
    ctx.write_metrics(&metrics)?;
    ctx.write_checkpoint(&layers)?;
    ctx.manifest.fact("env_steps", steps);
    ctx.manifest.fact("pretrain_kind", cfg.pretrain.tag());
    ctx.say(format!("pretrained {} for {steps} steps", cfg.pretrain.tag()));
    Ok(())
}

fn load_pretrained(ctx: &mut Ctx<'_>, dir: &Path) -> Result<Pretrained> {
    let manifest = Manifest::read(dir)?;
    if manifest.command != "pretrain" {
        bail!("{} is a `{}` run, not a pretrain run", dir.display(), manifest.command);
    }
    let steps: u64 = manifest
        .facts
        .get("env_steps")
        .context("pretrain manifest lacks env_steps")?
        .parse()?;
    let source = manifest
        .facts
        .get("pretrain_kind")
        .cloned()
        .unwrap_or_else(|| "init".into());
    let bytes = fs::read(dir.join(CHECKPOINT_FILE))?;
    ctx.manifest.input("init_checkpoint", &bytes);
    let layers = read_checkpoint(&mut bytes.as_slice())?;
    if layers.len() < 6 {
        bail!("pretrained checkpoint has only {} layers", layers.len());
    }
    Ok(Pretrained {
        trunk: layers[..6].to_vec(),
        steps,
        source,
    })
}

fn actor_critic(ctx: &mut Ctx<'_>, aux: bool) -> Result<()> {
    let world = load_world(ctx)?;
    let task = main_task(ctx.cfg);
    let acfg = a2c_config(ctx.cfg);
    let run: A2cRun = if aux {
        train_aux(&world, &task, &acfg, ctx.cfg.aux)?
    } else if ctx.cfg.init.is_empty() {
        finetune_a2c(&world, &task, &acfg, None)?
    } else {
        let init = PathBuf::from(&ctx.cfg.init);
        let pre = load_pretrained(ctx, &init)?;
        finetune_a2c(&world, &task, &acfg, Some(&pre))?
    };
    ctx.write_metrics(&run.metrics)?;
    ctx.write_checkpoint(run.net.layers())?;
    ctx.manifest.fact("env_steps", run.steps);
    ctx.manifest.fact("total_env_steps", run.total_steps());
    ctx.manifest.fact("arm", &run.arm);
    ctx.say(format!(
        "{}: final return {:.4} over {} episodes, {} steps including pretraining",
        run.arm,
        run.final_return,
        run.episodes.len(),
        run.total_steps()
    ));
    Ok(())
}

/// Rebuilds a goal-conditioned network's shape from its checkpoint.
fn uvfa_from_layers(world: &World, layers: Vec<Layer>) -> Result<UvfaNet> {
    let (hidden, embed) = match (layers.get(4).map(|l| l.spec), layers.get(6).map(|l| l.spec)) {
        (Some(LayerSpec::Dense { fan_out: h, .. }), Some(LayerSpec::Dense { fan_out: e, .. })) => (h, e),
        _ => bail!("checkpoint is not a goal-conditioned network"),
    };
    let config = NetConfig::new(world.observation_shape()).with_widths(hidden, embed);
    UvfaNet::from_layers(config, layers).context("checkpoint does not match the layout's network shape")
}

fn eval(ctx: &mut Ctx<'_>) -> Result<()> {
    let world = load_world(ctx)?;
    if ctx.cfg.checkpoint.is_empty() {
        bail!("eval needs `checkpoint`");
    }
    let path = PathBuf::from(&ctx.cfg.checkpoint);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    ctx.manifest.input("checkpoint", &bytes);
    let net = uvfa_from_layers(&world, read_checkpoint(&mut bytes.as_slice())?)?;
    let mut policy = UvfaPolicy::new(&net, &world)?;
    let goals: Vec<usize> = (0..world.feasible_states().len()).collect();
    let eval_seed = SeedTree::new(ctx.cfg.seed).child(2).seed();
    let report = evaluate_mastery(&world, &mut policy, &goals, ctx.cfg.eval_steps, eval_seed, 0);
    if fs::read(&path)? != bytes {
        bail!("checkpoint changed during evaluation");
    }
    let mut w = csv::Writer::from_path(ctx.dir.join("goals.csv"))?;
    w.write_record(["goal_state", "achieved"])?;
    for (g, ok) in report.goals.iter().zip(&report.achieved) {
        w.write_record([g.to_string(), u8::from(*ok).to_string()])?;
    }
    w.flush()?;
    let row = MetricRow::new(0, "mastery", report.fraction_achieved, ctx.cfg.seed, "eval");
    ctx.write_metrics(&[row])?;
    ctx.say(format!(
        "mastery {:.4} over {} goals",
        report.fraction_achieved,
        goals.len()
    ));
    Ok(())
}

fn compare(ctx: &mut Ctx<'_>) -> Result<()> {
    let paths: Vec<&str> = ctx
        .cfg
        .runs
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if paths.is_empty() {
        bail!("compare needs `runs`, a comma-separated list of metric files");
    }
    let mut rows = Vec::new();
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("reading {p}"))?;
        ctx.manifest.input(p, &bytes);
        rows.extend(read_metrics(bytes.as_slice())?);
    }
    if !ctx.cfg.metric.is_empty() {
        rows.retain(|r| r.metric_name == ctx.cfg.metric);
    }
    let cmp = compare_runs(&rows, ctx.cfg.statistic)?;
    write_comparison(BufWriter::new(File::create(ctx.dir.join("comparison.csv"))?), &cmp)?;
    let mut out = Vec::new();
    for (metric, arm, delta) in &cmp.final_deltas {
        out.push(MetricRow::new(
            0,
            &format!("final_delta_{metric}"),
            *delta,
            ctx.cfg.seed,
            arm,
        ));
        ctx.say(format!("{metric} {arm}: {delta:+.4} against the first arm"));
    }
    ctx.write_metrics(&out)?;
    Ok(())
}

//! The `rsn` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rsn_core::analysis::{
    ablation_variant, block_template, calibrate_width, count_cost, rf_propagate, symbolic_network, table2_row,
    BlockTemplate, WidthSearch, TABLE2_TEMPLATES,
};
use rsn_core::arch::{build_network, FusionMode, NetworkConfig};
use rsn_core::codec::{
    decode, flip_permutation, DecodeConfig, OffsetRule, COCO_FLIP_PAIRS, COCO_JOINT_NAMES, MPII_FLIP_PAIRS,
};
use rsn_core::data::{synth_annotations, synth_generate, AugmentConfig, Record, SynthConfig};
use rsn_core::metrics::{average_precision, coco_kappas, oks_thresholds};
use rsn_core::train::{TrainConfig, Trainer};
use rsn_core::verify::{check_prm, check_primitive, check_rsb, run_suite, CaseResult, Primitive, SuiteConfig};

use crate::error::{Error, Result};
use crate::{checkpoint, coco, hmp, image_io, netcfg};

pub const SEED_ENV: &str = "RSN_SEED";

#[derive(Debug, Parser)]
#[command(name = "rsn", version, about = "Residual steps network laboratory")]
pub struct Cli {
    /// Print `key=value` lines instead of aligned text.
    #[arg(long, global = true)]
    pub kv: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relative receptive fields of canonical blocks.
    Analyze(AnalyzeArgs),
    /// Parameter and multiply-accumulate counts of a network.
    Count(CountArgs),
    /// Fit the branch-width multiplier, or the channel-matched ablation variants.
    Calibrate(CalibrateArgs),
    /// Train on synthetic figures or a COCO-style annotation file.
    Train(TrainArgs),
    /// Decode a heatmap dump into keypoints.
    Decode(DecodeArgs),
    /// OKS average precision of a result file against ground truth.
    Eval(EvalArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset (PPM images plus an annotation file).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// resnet, osnet, res2net, rsn, baseline1 or baseline2; every row of the comparison when omitted.
    #[arg(long)]
    pub block: Option<String>,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=6))]
    pub branches: u64,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// Preset name or config file.
    #[arg(long, default_value = "rsn18")]
    pub config: String,
    /// Input size `HxW`; the config's own size when omitted.
    #[arg(long, value_parser = netcfg::parse_hw)]
    pub input: Option<(usize, usize)>,
    /// Also list every parameterised node.
    #[arg(long)]
    pub breakdown: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value = "rsn18")]
    pub config: String,
    /// Parameter count to match.
    #[arg(long, default_value_t = 12.5e6)]
    pub target_params: f64,
    /// Instead, fit baseline and branch-count variants to the config's MACs.
    #[arg(long)]
    pub ablation: bool,
    #[arg(long, default_value_t = 0.001)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "rsn-tiny")]
    pub config: String,
    /// `synth`, or a COCO-style annotation file whose images sit next to it.
    #[arg(long, default_value = "synth")]
    pub data: String,
    /// Number of synthetic images.
    #[arg(long, default_value_t = 32)]
    pub images: usize,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Steps between PCK probes; the total is rounded up to whole epochs.
    #[arg(long, default_value_t = 30)]
    pub epoch_steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub final_lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    /// Plain crops instead of random rotation, scale and flip.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many steps are done; the schedule still spans `--steps`.
    #[arg(long)]
    pub until: Option<usize>,
    /// Final training checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also append the metrics log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// PCK threshold as a fraction of the longer box side.
    #[arg(long, default_value_t = 0.1)]
    pub pck_alpha: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Pairs {
    Coco,
    Mpii,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Offset {
    Unit,
    Full,
    None,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// Prediction on the mirrored input, as produced (still mirrored).
    #[arg(long)]
    pub flip: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "coco")]
    pub pairs: Pairs,
    #[arg(long, value_enum, default_value = "unit")]
    pub offset: Offset,
    #[arg(long)]
    pub no_blur: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub dt: PathBuf,
    #[arg(long, default_value_t = 17)]
    pub keypoints: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Every primitive, every block variant (2..=6 branches, three fusion modes) and the refine machine.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub primitive: Option<String>,
    /// Fusion mode of a single block check.
    #[arg(long)]
    pub block: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub branches: usize,
    #[arg(long)]
    pub prm: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 20)]
    pub shapes: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Reason a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<rsn_core::Error> for Failure {
    fn from(e: rsn_core::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Text or `key=value` output.
pub struct Out<'a> {
    pub kv: bool,
    w: &'a mut dyn Write,
}

impl Out<'_> {
    fn line(&mut self, s: &str) {
        let _ = writeln!(self.w, "{s}");
    }

    /// Aligned `key: value` rows, or `key=value` lines.
    fn rows(&mut self, rows: &[(String, String)]) {
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0) + 1;
        for (k, v) in rows {
            if self.kv {
                self.line(&format!("{k}={v}"));
            } else {
                self.line(&format!("{:<width$} {v}", format!("{k}:")));
            }
        }
    }

    /// One line-delimited record, the same in both modes.
    fn record<K: AsRef<str>>(&mut self, fields: &[(K, String)]) {
        let s: Vec<String> = fields.iter().map(|(k, v)| format!("{}={v}", k.as_ref())).collect();
        self.line(&s.join(" "));
    }
}

fn default_seed(flag: Option<u64>) -> std::result::Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Parse `args` (program name first), run, and return the exit status:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let mut o = Out { kv: cli.kv, w: out };
    let r = match &cli.command {
        Command::Analyze(a) => analyze(a, &mut o),
        Command::Count(a) => count(a, &mut o),
        Command::Calibrate(a) => calibrate(a, &mut o),
        Command::Train(a) => train(a, &mut o),
        Command::Decode(a) => decode_cmd(a, &mut o),
        Command::Eval(a) => eval(a, &mut o),
        Command::Gradcheck(a) => gradcheck(a, &mut o),
        Command::Synth(a) => synth(a, &mut o),
    };
    match r {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
        Err(Failure::Domain(m)) => {
            let _ = writeln!(err, "error: {m}");
            1
        }
    }
}

fn analyze(a: &AnalyzeArgs, o: &mut Out) -> Outcome {
    let templates = match &a.block {
        Some(name) => vec![BlockTemplate::parse(name, a.branches as usize).map_err(|e| Failure::Usage(e.to_string()))?],
        None => TABLE2_TEMPLATES.to_vec(),
    };
    let single = templates.len() == 1;
    for t in templates {
        let row = table2_row(t)?;
        let g = block_template(t)?;
        let rf = rf_propagate(&g)?;
        let max = rf.iter().map(|r| r.rf.max()).max().unwrap_or(1);
        let prefix = if single { String::new() } else { format!("{}.", t.name()) };
        if !single && !o.kv {
            o.line(&format!("[{}]", t.name()));
        }
        let mut rows: Vec<(String, String)> = row
            .iter()
            .map(|(label, set)| {
                let vals: Vec<String> = set.values().map(|v| v.to_string()).collect();
                (format!("{prefix}{label}"), vals.join(","))
            })
            .collect();
        if o.kv {
            rows.push((format!("{prefix}max_rf"), max.to_string()));
        }
        o.rows(&rows);
    }
    Ok(())
}

fn resolve(spec: &str) -> std::result::Result<NetworkConfig, Failure> {
    netcfg::resolve(spec).map_err(|e| match e {
        Error::Io { .. } | Error::Format { .. } => Failure::Usage(e.to_string()),
        other => Failure::Domain(other.to_string()),
    })
}

fn count(a: &CountArgs, o: &mut Out) -> Outcome {
    let mut cfg = resolve(&a.config)?;
    if let Some(hw) = a.input {
        cfg.input = hw;
        cfg.validate()?;
    }
    let report = count_cost(&symbolic_network(&cfg)?, cfg.input)?;
    let mut rows = vec![
        ("config".to_string(), cfg.name.clone()),
        ("input".into(), format!("{}x{}", cfg.input.0, cfg.input.1)),
        ("width_mult".into(), cfg.width_mult.to_string()),
        ("params".into(), report.params.to_string()),
        ("params_m".into(), format!("{:.3}", report.mparams())),
        ("macs".into(), report.macs.to_string()),
        ("gflops".into(), format!("{:.3}", report.gflops())),
        ("flop_convention".into(), "1 FLOP = 1 multiply-accumulate".into()),
    ];
    if a.breakdown {
        for e in &report.breakdown {
            rows.push((format!("node{}.{}", e.node, e.kind), format!("params={} macs={}", e.params, e.macs)));
        }
    }
    o.rows(&rows);
    Ok(())
}

fn calibrate(a: &CalibrateArgs, o: &mut Out) -> Outcome {
    let cfg = resolve(&a.config)?;
    let search = WidthSearch {
        step: a.step,
        ..WidthSearch::default()
    };
    if !a.ablation {
        if !(a.target_params > 0.0) {
            return Err(Failure::Usage("--target-params must be positive".into()));
        }
        let (m, report) = calibrate_width(&cfg, a.target_params.round() as u64, search)?;
        o.rows(&[
            ("config".into(), cfg.name.clone()),
            ("width_mult".into(), m.to_string()),
            ("params".into(), report.params.to_string()),
            ("macs".into(), report.macs.to_string()),
            ("gflops".into(), format!("{:.3}", report.gflops())),
        ]);
        return Ok(());
    }
    let mut variants: Vec<(FusionMode, usize)> = (2..=6).map(|b| (FusionMode::Rsn, b)).collect();
    variants.push((FusionMode::Baseline1, cfg.branches));
    variants.push((FusionMode::Baseline2, cfg.branches));
    let mut rows = Vec::new();
    for (fusion, b) in variants {
        let r = ablation_variant(&cfg, b, fusion, search)?;
        let key = format!("{}.b{b}", fusion.as_str());
        rows.push((format!("{key}.width_mult"), r.config.width_mult.to_string()));
        rows.push((format!("{key}.macs"), r.variant.macs.to_string()));
        rows.push((format!("{key}.params"), r.variant.params.to_string()));
        rows.push((format!("{key}.macs_rel_diff"), format!("{:+.4}", r.flops_rel_diff())));
    }
    o.rows(&rows);
    Ok(())
}

/// One record per annotation (crowd regions skipped), images read from `dir`.
pub fn coco_records(ds: &coco::Dataset, dir: &Path) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for a in ds.annotations.iter().filter(|a| !a.crowd) {
        let info = ds
            .image(a.image_id)
            .ok_or_else(|| Error::format("coco", format!("annotation {} has no image", a.id)))?;
        let image = image_io::read(&dir.join(&info.file_name))?;
        out.push(Record {
            source_id: a.id,
            image,
            keypoints: a.keypoints.clone(),
        });
    }
    Ok(out)
}

fn train(a: &TrainArgs, o: &mut Out) -> Outcome {
    let net_cfg = resolve(&a.config)?;
    let seed = default_seed(a.seed)?;
    if a.epoch_steps == 0 || a.batch == 0 {
        return Err(Failure::Usage("--epoch-steps and --batch must be positive".into()));
    }
    let records: Vec<Record> = if a.data == "synth" {
        if a.images == 0 {
            return Err(Failure::Usage("--images must be positive".into()));
        }
        synth_generate(seed, a.images, &SynthConfig::default()).into_iter().map(Into::into).collect()
    } else {
        let path = Path::new(&a.data);
        let ds = coco::load(path, net_cfg.keypoints)?;
        coco_records(&ds, path.parent().unwrap_or(Path::new(".")))?
    };
    let pairs: &[(usize, usize)] = match net_cfg.keypoints {
        17 => &COCO_FLIP_PAIRS,
        16 => &MPII_FLIP_PAIRS,
        _ => &[],
    };
    let cfg = TrainConfig {
        epochs: a.steps.div_ceil(a.epoch_steps),
        steps_per_epoch: a.epoch_steps,
        base_lr: a.lr,
        final_lr: a.final_lr,
        weight_decay: a.weight_decay,
        batch: a.batch,
        seed,
        augment: !a.no_augment,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let net = build_network(&net_cfg)?;
    let aug = AugmentConfig::new(net_cfg.input, pairs);
    let mut trainer = match &a.resume {
        Some(p) => {
            let state = checkpoint::load_train_state(p, &net)?;
            Trainer::resume(net, records, cfg, aug, state)?
        }
        None => Trainer::new(net, records, cfg, aug)?,
    };
    let mut log = match &a.log {
        Some(p) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(Error::io(p))?,
        ),
        None => None,
    };
    let started = Instant::now();
    let mut first_loss = None;
    let mut last_loss = f64::NAN;
    let stop = a.until.map_or(usize::MAX, |u| u.min(trainer.cfg.total_steps()));
    while !trainer.done() && (trainer.state.step as usize) < stop {
        let l = trainer.step()?;
        let mut fields = vec![
            ("step".to_string(), l.step.to_string()),
            ("epoch".into(), l.epoch.to_string()),
            ("lr".into(), format!("{:e}", l.lr)),
            ("loss".into(), format!("{:.6e}", l.loss)),
        ];
        for (i, s) in l.stage_losses.iter().enumerate() {
            fields.push((format!("stage{i}"), format!("{s:.6e}")));
        }
        if l.fully_masked {
            fields.push(("masked".into(), "1".into()));
        }
        emit(o, &mut log, &fields);
        first_loss.get_or_insert(l.loss);
        last_loss = l.loss;
        if (l.step + 1) % trainer.cfg.steps_per_epoch == 0 || l.step + 1 == trainer.cfg.total_steps() {
            let p = trainer.probe(a.pck_alpha)?;
            emit(
                o,
                &mut log,
                &[("epoch", l.epoch.to_string()), ("step", l.step.to_string()), ("pck", format!("{:.4}", p.mean))],
            );
        }
    }
    if let Some(p) = &a.out {
        checkpoint::save_train_state(p, &trainer.state)?;
    }
    emit(
        o,
        &mut log,
        &[
            ("done", trainer.state.step.to_string()),
            ("initial_loss", format!("{:.6e}", first_loss.unwrap_or(f64::NAN))),
            ("final_loss", format!("{last_loss:.6e}")),
            ("masked_batches", trainer.masked_batches.to_string()),
            ("seconds", format!("{:.1}", started.elapsed().as_secs_f64())),
        ],
    );
    Ok(())
}

fn emit<K: AsRef<str>>(o: &mut Out, log: &mut Option<std::fs::File>, fields: &[(K, String)]) {
    o.record(fields);
    if let Some(f) = log {
        let s: Vec<String> = fields.iter().map(|(k, v)| format!("{}={v}", k.as_ref())).collect();
        let _ = writeln!(f, "{}", s.join(" "));
    }
}

fn decode_cmd(a: &DecodeArgs, o: &mut Out) -> Outcome {
    let h = hmp::read(&a.heatmaps)?;
    let pairs: &[(usize, usize)] = match a.pairs {
        Pairs::Coco => &COCO_FLIP_PAIRS,
        Pairs::Mpii => &MPII_FLIP_PAIRS,
        Pairs::None => &[],
    };
    flip_permutation(pairs, h.k).map_err(|e| Failure::Usage(e.to_string()))?;
    let flipped = match &a.flip {
        Some(p) => Some(hmp::read(p)?.mirrored()),
        None => None,
    };
    let cfg = DecodeConfig {
        blur: if a.no_blur { None } else { DecodeConfig::default().blur },
        offset: match a.offset {
            Offset::Unit => OffsetRule::UnitQuarter,
            Offset::Full => OffsetRule::FullQuarter,
            Offset::None => OffsetRule::None,
        },
    };
    let k = decode(&h, flipped.as_ref(), pairs, 1.0, &cfg)?;
    let mut rows = Vec::new();
    for (i, j) in k.joints.iter().enumerate() {
        let name = if h.k == 17 { COCO_JOINT_NAMES[i].to_string() } else { format!("joint{i}") };
        if o.kv {
            rows.push((format!("{name}.x"), format!("{:.4}", j.x)));
            rows.push((format!("{name}.y"), format!("{:.4}", j.y)));
            rows.push((format!("{name}.score"), format!("{:.4}", j.score)));
        } else {
            rows.push((name, format!("{:>10.4} {:>10.4} {:>7.4}", j.x, j.y, j.score)));
        }
    }
    rows.push(("pose_score".into(), format!("{:.4}", k.pose_score())));
    o.rows(&rows);
    Ok(())
}

fn eval(a: &EvalArgs, o: &mut Out) -> Outcome {
    let gt = coco::load(&a.gt, a.keypoints)?;
    let dt = coco::load_results(&a.dt, a.keypoints)?;
    let kappas = if a.keypoints == 17 {
        coco_kappas()
    } else {
        return Err(Failure::Usage("OKS constants are only defined for the 17 COCO joints".into()));
    };
    let r = average_precision(&dt, &gt.ground_truth(), &kappas, &oks_thresholds())?;
    let mut rows = vec![("ap".to_string(), format!("{:.4}", r.mean_ap))];
    for (t, ap) in r.thresholds.iter().zip(&r.ap) {
        rows.push((format!("ap@{t:.2}"), format!("{ap:.4}")));
    }
    rows.push(("num_gt".into(), r.num_gt.to_string()));
    rows.push(("num_dt".into(), dt.len().to_string()));
    rows.push(("ignored_crowd".into(), r.ignored_crowd.to_string()));
    rows.push(("ignored_unlabeled".into(), r.ignored_unlabeled.to_string()));
    o.rows(&rows);
    Ok(())
}

fn case_row(o: &mut Out, r: &CaseResult) {
    o.record(&[
        ("case", r.name.clone()),
        ("shapes", r.shapes.to_string()),
        ("max_rel_err", format!("{:.3e}", r.max_rel_err)),
        ("worst", r.worst.clone()),
        ("kinks", r.kinks.to_string()),
        ("status", if r.passed() { "pass" } else { "FAIL" }.into()),
    ]);
}

fn gradcheck(a: &GradcheckArgs, o: &mut Out) -> Outcome {
    if !(a.tol > 0.0) || a.shapes == 0 {
        return Err(Failure::Usage("--tol and --shapes must be positive".into()));
    }
    let cfg = SuiteConfig {
        shapes: a.shapes,
        seed: default_seed(a.seed)?,
        tolerance: a.tol,
        ..SuiteConfig::default()
    };
    let started = Instant::now();
    let mut results = Vec::new();
    if a.all {
        results = run_suite(&cfg, |r| case_row(o, r))?;
    } else {
        if let Some(name) = &a.primitive {
            let p = Primitive::ALL
                .into_iter()
                .find(|p| p.name() == name)
                .ok_or_else(|| Failure::Usage(format!("unknown primitive `{name}`")))?;
            results.push(check_primitive(p, &cfg)?);
        }
        if let Some(block) = &a.block {
            let fusion: FusionMode = block.parse().map_err(|e: rsn_core::Error| Failure::Usage(e.to_string()))?;
            if !(2..=6).contains(&a.branches) {
                return Err(Failure::Usage("--branches must be in 2..=6".into()));
            }
            results.push(check_rsb(a.branches, fusion, &cfg)?);
        }
        if a.prm {
            results.push(check_prm(&cfg)?);
        }
        if results.is_empty() {
            return Err(Failure::Usage("nothing to check: pass --all, --primitive, --block or --prm".into()));
        }
        for r in &results {
            case_row(o, r);
        }
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    o.record(&[
        ("cases", results.len().to_string()),
        ("failed", failed.to_string()),
        ("seconds", format!("{:.1}", started.elapsed().as_secs_f64())),
    ]);
    if failed > 0 {
        return Err(Failure::Domain(format!("{failed} gradient check(s) above tolerance {}", a.tol)));
    }
    Ok(())
}

fn synth(a: &SynthArgs, o: &mut Out) -> Outcome {
    if a.n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let seed = default_seed(a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
    let recs = synth_generate(seed, a.n, &SynthConfig::default());
    let (images, anns) = synth_annotations(&recs);
    for (r, info) in recs.iter().zip(&images) {
        image_io::write(&a.out.join(&info.file_name), &r.image)?;
    }
    let ann_path = a.out.join("annotations.json");
    coco::save(&ann_path, &images, &anns, &COCO_JOINT_NAMES)?;
    o.rows(&[
        ("images".into(), images.len().to_string()),
        ("annotations".into(), ann_path.display().to_string()),
        ("seed".into(), seed.to_string()),
    ]);
    Ok(())
}

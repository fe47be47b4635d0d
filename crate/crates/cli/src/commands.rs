use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pocketdiff::checkpoint::{self, Checkpoint};
use pocketdiff::guidance::{GuidanceMode, Model};
use pocketdiff::io::{self, INDEX_FILE};
use pocketdiff::metrics::{self, Aggregate, Histogram, MetricsReport, MoleculeRow, SpecificityGroup, Summary};
use pocketdiff::molsys::AtomCountPrior;
use pocketdiff::net::NetConfig;
use pocketdiff::pipeline::{self, AtomCount, RunConfig};
use pocketdiff::rng::stream_rng;
use pocketdiff::training::{self, ClassifierNoiseMode, ConditionMode};
use pocketdiff::{derivation, oracle, AtomCloud, PocketCloud, Vocab};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::manifest::{self, Header, MANIFEST_FILE};
use crate::{Cli, Command, EvalArgs, GenArgs, NoiseModeArg, SampleArgs, TrainClassifierArgs, TrainDiffusionArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] pocketdiff::Error),
    #[error("{0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            2 => "config",
            3 => "io",
            4 => "numerical",
            _ => "internal",
        }
    }

    /// 2 config, 3 I/O, 4 numerical abort.
    pub fn code(&self) -> u8 {
        use pocketdiff::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Data(_) => 3,
            CliError::Internal(_) => 1,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(E::Io(_) | E::Parse(_) | E::Checkpoint(_) | E::Json(_)) => 3,
            CliError::Core(_) => 2,
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind(), "code": self.code(), "message": self.to_string()}}).to_string()
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Reads a run config, or the config embedded in a manifest header.
pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match serde_json::from_str::<RunConfig>(&text) {
        Ok(c) => Ok(c),
        Err(direct) => {
            let first = text.lines().next().unwrap_or("");
            match serde_json::from_str::<Header>(first) {
                Ok(h) => Ok(h.config),
                Err(_) => Err(CliError::Config(format!("{}: {direct}", path.display()))),
            }
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(cfg, a),
        Command::TrainClassifier(a) => cmd_train_classifier(cfg, a),
        Command::TrainDiffusion(a) => cmd_train_diffusion(cfg, a),
        Command::Sample(a) => cmd_sample(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Selftest => cmd_selftest(cfg),
    }
}

#[derive(Serialize)]
struct GenRow<'a> {
    kind: &'static str,
    split: &'static str,
    id: &'a str,
    delta_g: f64,
    qed: f64,
    sa: f64,
    pocket_sha256: String,
    ligand_sha256: String,
}

fn cmd_gen(mut cfg: RunConfig, a: &GenArgs) -> CliResult<()> {
    if let Some(n) = a.n_train {
        cfg.dataset.n_train = n;
    }
    if let Some(n) = a.n_test {
        cfg.dataset.n_test = n;
    }
    cfg.validate()?;
    let (train, test) = pipeline::generate_splits(&cfg)?;
    let mut rows = Vec::new();
    for (split, records) in [("train", &train), ("test", &test)] {
        let dir = a.out.join(split);
        io::write_split(&dir, records).map_err(|e| match e {
            pocketdiff::Error::Io(source) => CliError::io(&dir, source),
            other => other.into(),
        })?;
        for r in records.iter() {
            rows.push(GenRow {
                kind: "complex",
                split,
                id: &r.id,
                delta_g: r.labels.delta_g,
                qed: r.labels.qed,
                sa: r.labels.sa,
                pocket_sha256: manifest::file_hash(&dir.join(format!("{}_pocket.xyz", r.id)))?,
                ligand_sha256: manifest::file_hash(&dir.join(format!("{}_ligand.xyz", r.id)))?,
            });
        }
    }
    let masked = train.iter().filter(|r| r.labels.delta_g > 0.0).count();
    log::info!("wrote {} train / {} test complexes ({masked} masked)", train.len(), test.len());
    manifest::write(&a.out.join(MANIFEST_FILE), &Header::new("gen", &cfg, Vec::new()), &rows)
}

fn dataset_dir(cfg: &RunConfig, flag: Option<&Path>) -> CliResult<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.paths.dataset.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Config("no dataset given (--data or paths.dataset)".into()))
}

fn read_records(dir: &Path) -> CliResult<Vec<pocketdiff::ComplexRecord>> {
    if !dir.join(INDEX_FILE).is_file() {
        return Err(CliError::Io {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("no {INDEX_FILE} in dataset directory")),
        });
    }
    io::read_split(dir, &Vocab::default()).map_err(|e| match e {
        pocketdiff::Error::Io(source) => CliError::io(dir, source),
        other => other.into(),
    })
}

fn log_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.csv");
    out.with_file_name(name)
}

/// Checkpoint metadata shared by both network kinds.
#[derive(Debug, Serialize, Deserialize)]
struct CkptMeta {
    kind: String,
    schedule: pocketdiff::ScheduleConfig,
    train: training::TrainConfig,
    vocab: Vocab,
    data_sha256: String,
    #[serde(default)]
    condition_mode: Option<String>,
    #[serde(default)]
    atom_prior: Option<AtomCountPrior>,
}

fn data_hash(dir: &Path) -> CliResult<String> {
    manifest::file_hash(&dir.join(INDEX_FILE))
}

fn save_ckpt(out: &Path, net: &NetConfig, outcome: &training::TrainOutcome, meta: &CkptMeta) -> CliResult<()> {
    let meta = serde_json::to_value(meta).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(out, checkpoint::encode(net, &outcome.params, &meta)?)?;
    write_file(&log_path(out), training::log_csv(&outcome.log))
}

fn cmd_train_classifier(mut cfg: RunConfig, a: &TrainClassifierArgs) -> CliResult<()> {
    let mut train = cfg.classifier_train_config();
    if let Some(e) = a.common.epochs {
        train.epochs = e;
    }
    if let Some(lr) = a.common.lr {
        train.lr = lr;
    }
    if let Some(m) = a.noise_mode {
        train.classifier_noise_mode = match m {
            NoiseModeArg::CleanX0 => ClassifierNoiseMode::CleanX0,
            NoiseModeArg::NoisyXt => ClassifierNoiseMode::NoisyXt,
        };
    }
    if a.multi {
        cfg.classifier.outputs = 3;
    }
    train.seed = cfg.seed;
    cfg.classifier_training = Some(train.clone());
    let dir = dataset_dir(&cfg, a.common.data.as_deref())?;
    cfg.paths.dataset = Some(dir.display().to_string());
    cfg.validate()?;
    let records = read_records(&dir)?;
    let sched = cfg.schedule.build()?;
    let outcome = training::train_classifier(&records, &cfg.classifier, &train, Some(&sched))?;
    let meta = CkptMeta {
        kind: "classifier".into(),
        schedule: cfg.schedule,
        train,
        vocab: Vocab::default(),
        data_sha256: data_hash(&dir)?,
        condition_mode: None,
        atom_prior: None,
    };
    save_ckpt(&a.common.out, &cfg.classifier, &outcome, &meta)
}

fn cmd_train_diffusion(mut cfg: RunConfig, a: &TrainDiffusionArgs) -> CliResult<()> {
    if let Some(e) = a.common.epochs {
        cfg.training.epochs = e;
    }
    if let Some(lr) = a.common.lr {
        cfg.training.lr = lr;
    }
    if let Some(p) = a.p_uncond {
        cfg.training.p_unconditional = p;
    }
    cfg.training.seed = cfg.seed;
    let mode = if a.cfg_mode {
        cfg.denoiser.cond_channels = 2;
        ConditionMode::Cfg
    } else {
        ConditionMode::Off
    };
    let dir = dataset_dir(&cfg, a.common.data.as_deref())?;
    cfg.paths.dataset = Some(dir.display().to_string());
    cfg.validate()?;
    let records = read_records(&dir)?;
    let sched = cfg.schedule.build()?;
    let prior = AtomCountPrior::from_records(&records, cfg.sampling.prior_bin_width)?;
    let outcome = training::train_diffusion(&records, &cfg.denoiser, &cfg.training, &sched, mode)?;
    let meta = CkptMeta {
        kind: "denoiser".into(),
        schedule: cfg.schedule,
        train: cfg.training.clone(),
        vocab: Vocab::default(),
        data_sha256: data_hash(&dir)?,
        condition_mode: Some(if a.cfg_mode { "cfg" } else { "off" }.into()),
        atom_prior: Some(prior),
    };
    save_ckpt(&a.common.out, &cfg.denoiser, &outcome, &meta)
}

fn load_ckpt(path: &Path, kind: &str, cfg: &RunConfig) -> CliResult<(Checkpoint, CkptMeta)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let ck = checkpoint::decode(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let meta: CkptMeta = serde_json::from_value(ck.meta.clone())
        .map_err(|e| CliError::Data(format!("{}: checkpoint metadata: {e}", path.display())))?;
    if meta.kind != kind {
        return Err(CliError::Config(format!("{} holds a {}, expected a {kind}", path.display(), meta.kind)));
    }
    if meta.schedule != cfg.schedule {
        return Err(CliError::Config(format!("{} was trained with a different schedule than the run config", path.display())));
    }
    if meta.vocab != Vocab::default() || ck.config.num_types != Vocab::default().len() {
        return Err(CliError::Config(format!("{} uses an incompatible element vocabulary", path.display())));
    }
    Ok((ck, meta))
}

/// Pockets in argument order; split directories contribute every record's
/// pocket in index order.
fn read_pockets(inputs: &[PathBuf]) -> CliResult<Vec<(String, PocketCloud, PathBuf)>> {
    let vocab = Vocab::default();
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            for r in read_records(p)? {
                let file = p.join(format!("{}_pocket.xyz", r.id));
                out.push((r.id, r.pocket, file));
            }
        } else {
            let (cloud, meta) = io::read_xyz(p, &vocab).map_err(|e| match e {
                pocketdiff::Error::Io(source) => CliError::io(p, source),
                other => CliError::Data(format!("{}: {other}", p.display())),
            })?;
            let id = io::meta_get(&meta, "id")
                .map(str::to_string)
                .or_else(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_else(|| format!("pocket{}", out.len()));
            out.push((id, PocketCloud::from_cloud(cloud), p.clone()));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for (id, pocket, _) in &out {
        if !seen.insert(id.clone()) {
            return Err(CliError::Config(format!("duplicate pocket id `{id}`")));
        }
        if pocket.is_empty() {
            return Err(pocketdiff::Error::EmptyPocket.into());
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no pockets given".into()));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    kind: String,
    id: String,
    pocket_id: String,
    file: String,
    seed: u64,
    chain_stream: u64,
    n_atoms: usize,
    mode: GuidanceMode,
    s: f64,
    target: f64,
    t: usize,
    delta_g: f64,
    qed: f64,
    sa: f64,
    clash: usize,
    valid: bool,
    sha256: String,
}

fn cmd_sample(mut cfg: RunConfig, a: &SampleArgs) -> CliResult<()> {
    let g = &mut cfg.guidance;
    if let Some(m) = a.mode {
        g.mode = m.into();
    }
    if let Some(s) = a.s {
        g.s = s;
    }
    if let Some(t) = a.target {
        g.target_delta_g = t;
        g.targets_multi.delta_g = t;
    }
    if let Some(c) = &a.clip {
        g.clip = match c.as_str() {
            "none" | "inf" => None,
            v => Some(v.parse().map_err(|_| CliError::Config(format!("--clip expects a number or `none`, got `{v}`")))?),
        };
    }
    if let Some(t) = a.stop_at_step {
        g.stop_at_step = t;
    }
    if let Some(t) = a.type_sampling {
        g.type_sampling = t.into();
    }
    if let Some(m) = a.clip_mode {
        g.clip_mode = m.into();
    }
    if let Some(k) = a.loss_kind {
        g.loss_kind = k.into();
    }
    if let Some(p) = a.grad_path {
        g.grad_path = p.into();
    }
    if let Some(c) = a.classify_on {
        g.classify_on = c.into();
    }
    if a.simplex_types {
        g.simplex_types = true;
    }
    let m = (&mut g.targets_multi, &mut g.weights_multi);
    for (flag, field) in [(a.target_qed, &mut m.0.qed), (a.target_sa, &mut m.0.sa), (a.w_vina, &mut m.1.w_vina), (a.w_qed, &mut m.1.w_qed), (a.w_sa, &mut m.1.w_sa)] {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(n) = a.n_per_pocket {
        cfg.sampling.n_per_pocket = n;
    }
    if a.n_atoms.is_some() {
        cfg.sampling.n_atoms = a.n_atoms;
    }
    if let Some(p) = &a.denoiser {
        cfg.paths.denoiser = Some(p.display().to_string());
    }
    if let Some(p) = &a.classifier {
        cfg.paths.classifier = Some(p.display().to_string());
    }
    if !a.pockets.is_empty() {
        cfg.paths.pockets = a.pockets.iter().map(|p| p.display().to_string()).collect();
    }
    cfg.validate()?;

    let mode = cfg.guidance.mode;
    let needs_classifier = matches!(mode, GuidanceMode::Classifier | GuidanceMode::MultiConstraint);
    let den_path = cfg.paths.denoiser.clone().ok_or_else(|| CliError::Config("no denoiser given (--denoiser)".into()))?;
    let (den, den_meta) = load_ckpt(Path::new(&den_path), "denoiser", &cfg)?;
    let clf = match (&cfg.paths.classifier, needs_classifier) {
        (Some(p), true) => Some(load_ckpt(Path::new(p), "classifier", &cfg)?),
        (None, true) => return Err(CliError::Config(format!("guidance mode {mode:?} needs --classifier"))),
        _ => None,
    };
    if matches!(mode, GuidanceMode::ClassifierFree) && den_meta.train.p_unconditional == 0.0 {
        log::warn!("denoiser was trained with p_unconditional = 0; its unconditional branch is untrained");
    }
    let pocket_inputs: Vec<PathBuf> = cfg.paths.pockets.iter().map(PathBuf::from).collect();
    let pockets = read_pockets(&pocket_inputs)?;
    let sizes = match (cfg.sampling.n_atoms, den_meta.atom_prior.clone()) {
        (Some(n), _) => AtomCount::Fixed(n),
        (None, Some(p)) => AtomCount::Prior(p),
        (None, None) => return Err(CliError::Config("denoiser checkpoint has no atom-count prior; pass --n-atoms".into())),
    };
    let sched = cfg.schedule.build()?;
    let named: Vec<(String, PocketCloud)> = pockets.iter().map(|(id, p, _)| (id.clone(), p.clone())).collect();
    let generated = pipeline::sample_pockets(
        Model { params: &den.params, cfg: &den.config },
        clf.as_ref().map(|(c, _)| Model { params: &c.params, cfg: &c.config }),
        &named,
        &sizes,
        &sched,
        &cfg.guidance,
        cfg.seed,
        cfg.sampling.n_per_pocket,
    )?;
    let scores = pipeline::score_generated(&generated, &named, &cfg.oracle);

    let mut inputs = vec![("denoiser".to_string(), manifest::file_hash(Path::new(&den_path))?)];
    if let (Some(p), Some(_)) = (&cfg.paths.classifier, &clf) {
        inputs.push(("classifier".into(), manifest::file_hash(Path::new(p))?));
    }
    for (id, pocket, src) in &pockets {
        inputs.push((format!("pocket:{id}"), manifest::file_hash(src)?));
        write_file(
            &a.out.join("pockets").join(format!("{id}.xyz")),
            io::write_xyz(pocket.cloud(), &[("id", id.clone()), ("source", "pocket".into())]),
        )?;
    }
    let mut rows = Vec::with_capacity(generated.len());
    for (g, sc) in generated.iter().zip(&scores) {
        let id = g.id();
        let file = format!("ligands/{id}.xyz");
        let text = io::write_xyz(
            &g.ligand,
            &[("id", id.clone()), ("source", "generated".into()), ("pocket", g.pocket_id.clone()), ("t", g.t.to_string())],
        );
        write_file(&a.out.join(&file), &text)?;
        rows.push(SampleRow {
            kind: "molecule".into(),
            id,
            pocket_id: g.pocket_id.clone(),
            file,
            seed: cfg.seed,
            chain_stream: g.chain_stream,
            n_atoms: g.ligand.len(),
            mode,
            s: cfg.guidance.s,
            target: cfg.guidance.target_delta_g,
            t: g.t,
            delta_g: sc.delta_g,
            qed: sc.qed,
            sa: sc.sa,
            clash: sc.clash,
            valid: sc.valid,
            sha256: manifest::sha256_hex(text.as_bytes()),
        });
    }
    log::info!("sampled {} ligands for {} pockets", rows.len(), pockets.len());
    manifest::write(&a.out.join(MANIFEST_FILE), &Header::new("sample", &cfg, inputs), &rows)
}

/// A set of ligands with their pockets, loaded from a sample directory or
/// a dataset split.
struct MoleculeSet {
    pockets: Vec<(String, PocketCloud)>,
    /// `(id, pocket index, ligand)`
    ligands: Vec<(String, usize, AtomCloud)>,
}

fn load_set(dir: &Path) -> CliResult<MoleculeSet> {
    let vocab = Vocab::default();
    let read = |p: &Path| {
        io::read_xyz(p, &vocab).map(|(c, _)| c).map_err(|e| match e {
            pocketdiff::Error::Io(source) => CliError::io(p, source),
            other => CliError::Data(format!("{}: {other}", p.display())),
        })
    };
    if dir.join(MANIFEST_FILE).is_file() && dir.join("pockets").is_dir() {
        let (_, lines) = manifest::read(&dir.join(MANIFEST_FILE))?;
        let mut pockets: Vec<(String, PocketCloud)> = Vec::new();
        let mut ligands = Vec::new();
        for line in lines {
            let row: SampleRow = serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            let idx = match pockets.iter().position(|(id, _)| *id == row.pocket_id) {
                Some(i) => i,
                None => {
                    let cloud = read(&dir.join("pockets").join(format!("{}.xyz", row.pocket_id)))?;
                    pockets.push((row.pocket_id.clone(), PocketCloud::from_cloud(cloud)));
                    pockets.len() - 1
                }
            };
            ligands.push((row.id, idx, read(&dir.join(&row.file))?));
        }
        Ok(MoleculeSet { pockets, ligands })
    } else {
        let records = read_records(dir)?;
        let pockets = records.iter().map(|r| (r.id.clone(), r.pocket.clone())).collect();
        let ligands = records.into_iter().enumerate().map(|(i, r)| (r.id, i, r.ligand.0)).collect();
        Ok(MoleculeSet { pockets, ligands })
    }
}

const TOP_PER_POCKET: usize = 10;
/// Range of the exported affinity histogram, kcal/mol.
const AFFINITY_HIST: (f64, f64, f64) = (-40.0, 20.0, 0.5);

fn hist_csv(gen: &Histogram, reference: Option<&Histogram>) -> String {
    let mut out = String::from("lo,hi,generated,reference\n");
    for (i, c) in gen.counts.iter().enumerate() {
        let lo = gen.lo + gen.width * i as f64;
        let r = reference.and_then(|h| h.counts.get(i)).copied().unwrap_or(0);
        writeln!(out, "{lo:.4},{:.4},{c},{r}", lo + gen.width).unwrap();
    }
    out
}

fn cmd_eval(cfg: RunConfig, a: &EvalArgs) -> CliResult<()> {
    cfg.validate()?;
    let set = load_set(&a.sampled)?;
    let reference = load_set(&a.reference)?;
    let rows: Vec<MoleculeRow> = set
        .ligands
        .iter()
        .map(|(id, p, lig)| {
            let (pid, pocket) = &set.pockets[*p];
            pipeline::score_molecule(id.clone(), pid.clone(), pocket, lig, &cfg.oracle)
        })
        .collect();

    let col = |f: fn(&MoleculeRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let mut diversities = Vec::new();
    let mut groups_idx = Vec::new();
    let mut rng = stream_rng(cfg.seed, 0xE7A1);
    for p in 0..set.pockets.len() {
        let mut members: Vec<usize> = (0..set.ligands.len()).filter(|&i| set.ligands[i].1 == p).collect();
        if members.len() >= 2 {
            let mols: Vec<AtomCloud> = members.iter().map(|&i| set.ligands[i].2.clone()).collect();
            diversities.push(metrics::diversity(&mols)?);
        }
        members.sort_by(|&x, &y| rows[x].delta_g.total_cmp(&rows[y].delta_g).then(x.cmp(&y)));
        members.truncate(TOP_PER_POCKET);
        let off = metrics::pick_off_targets(set.pockets.len(), p, a.off_targets, &mut rng);
        groups_idx.push((p, members, off));
    }
    let groups: Vec<SpecificityGroup> = groups_idx
        .iter()
        .map(|(p, members, off)| SpecificityGroup {
            pocket: &set.pockets[*p].1,
            ligands: members.iter().map(|&i| &set.ligands[i].2).collect(),
            off_targets: off.iter().map(|&o| &set.pockets[o].1).collect(),
        })
        .collect();
    let specificity = metrics::specificity_score(&groups, &|p, l| oracle::score(p, l, &cfg.oracle));

    let gen_mols: Vec<AtomCloud> = set.ligands.iter().map(|l| l.2.clone()).collect();
    let ref_mols: Vec<AtomCloud> = reference.ligands.iter().map(|l| l.2.clone()).collect();
    let gen_hist = metrics::geometry_histograms(&gen_mols);
    let ref_hist = metrics::geometry_histograms(&ref_mols);
    let jsd = metrics::jsd_table(&gen_hist, &ref_hist);
    let aggregate = Aggregate {
        n_molecules: rows.len(),
        delta_g: Summary::of(&col(|r| r.delta_g)),
        qed: Summary::of(&col(|r| r.qed)),
        sa: Summary::of(&col(|r| r.sa)),
        clash: Summary::of(&col(|r| r.clash as f64)),
        validity: if rows.is_empty() { 0.0 } else { rows.iter().filter(|r| r.valid).count() as f64 / rows.len() as f64 },
        diversity: (!diversities.is_empty()).then(|| pocketdiff::stats::mean(&diversities)),
        specificity,
        jsd,
    };
    let report = MetricsReport { molecules: rows, aggregate };
    let pretty = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&a.out.join("metrics.json"), pretty + "\n")?;
    write_file(&a.out.join("metrics.csv"), report.to_csv())?;

    let hist_dir = a.out.join("hist");
    for (name, h) in &gen_hist {
        let file = name.replace(':', "_") + ".csv";
        write_file(&hist_dir.join(file), hist_csv(h, ref_hist.get(name)))?;
    }
    let (lo, hi, w) = AFFINITY_HIST;
    let mut gen_dg = Histogram::new(lo, hi, w);
    report.molecules.iter().for_each(|r| gen_dg.add(r.delta_g));
    let mut ref_dg = Histogram::new(lo, hi, w);
    for (_, p, lig) in &reference.ligands {
        ref_dg.add(oracle::score(&reference.pockets[*p].1, lig, &cfg.oracle));
    }
    write_file(&hist_dir.join("delta_g.csv"), hist_csv(&gen_dg, Some(&ref_dg)))?;
    log::info!("evaluated {} molecules", report.molecules.len());
    Ok(())
}

fn cmd_selftest(cfg: RunConfig) -> CliResult<()> {
    let report = derivation::run_all(cfg.seed)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?);
    if report.pass {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.pass).count();
        Err(CliError::Core(pocketdiff::Error::Domain(format!("{failed} identity checks failed"))))
    }
}

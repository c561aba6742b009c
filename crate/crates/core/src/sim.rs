//! Small discrete generative worlds for checking the fusion rule exactly.
//!
//! A world draws a grasp `g ~ p(g)`, then an image symbol `i ~ p(i|g)` and an
//! object symbol `o ~ p(o|g)` independently given `g`. Under that
//! construction fusing `p(g|i)` and `p(g|o)` with the prior recovers
//! `p(g|i,o)` exactly, which [`check_eq1`] verifies by enumeration.
//!
//! All randomness comes from ChaCha8 seeded with a `u64`, so worlds and
//! sampled datasets are identical across runs and platforms.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::AffordanceRecord;
use crate::par::Execution;
use crate::scores::{ScoreFile, ScoreRecord};
use crate::taxonomy::{
    argmax_index, fuse, normalize, GraspDistribution, GraspTaxonomy, TaxonomyError, FOCUS_LABELS,
};

pub const MAX_GRASPS: usize = 4;
pub const MAX_SYMBOLS: usize = 5;
/// Tolerance for the fused-vs-exact posterior identity.
pub const EQ1_TOL: f64 = 1e-9;
/// Slack allowed when comparing enumerated accuracies.
pub const DOMINANCE_TOL: f64 = 1e-12;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("observation (image {image:?}, object {object:?}) has zero probability")]
    ImpossibleObservation {
        image: Option<usize>,
        object: Option<usize>,
    },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldShape {
    pub grasps: usize,
    pub images: usize,
    pub objects: usize,
}

impl WorldShape {
    pub fn new(grasps: usize, images: usize, objects: usize) -> Result<Self, SimError> {
        if !(2..=MAX_GRASPS).contains(&grasps) {
            return Err(SimError::BadParameter(format!(
                "grasp count {grasps} not in 2..={MAX_GRASPS}"
            )));
        }
        for (what, n) in [("image", images), ("object", objects)] {
            if !(2..=MAX_SYMBOLS).contains(&n) {
                return Err(SimError::BadParameter(format!(
                    "{what} count {n} not in 2..={MAX_SYMBOLS}"
                )));
            }
        }
        Ok(Self {
            grasps,
            images,
            objects,
        })
    }
}

/// Which evidence source a posterior or decision rule uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cue {
    Image,
    Object,
}

/// Decision rule scored by [`expected_accuracy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Cnn,
    Affordance,
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub taxonomy: GraspTaxonomy,
    pub prior: GraspDistribution,
    /// `|G| x I`, row `g` is `p(i|g)`.
    pub image_given_grasp: Vec<Vec<f64>>,
    /// `|G| x O`, row `g` is `p(o|g)`.
    pub object_given_grasp: Vec<Vec<f64>>,
}

fn check_rows(name: &str, rows: &[Vec<f64>], grasps: usize) -> Result<usize, SimError> {
    if rows.len() != grasps {
        return Err(SimError::BadParameter(format!(
            "{name}: {} rows for {grasps} grasps",
            rows.len()
        )));
    }
    let width = rows[0].len();
    if !(1..=MAX_SYMBOLS).contains(&width) {
        return Err(SimError::BadParameter(format!("{name}: {width} symbols")));
    }
    for (g, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(SimError::BadParameter(format!("{name}: ragged row {g}")));
        }
        if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(SimError::BadParameter(format!(
                "{name}: row {g} has a negative entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(SimError::BadParameter(format!(
                "{name}: row {g} sums to {sum}"
            )));
        }
    }
    Ok(width)
}

impl World {
    pub fn new(
        prior: GraspDistribution,
        image_given_grasp: Vec<Vec<f64>>,
        object_given_grasp: Vec<Vec<f64>>,
    ) -> Result<Self, SimError> {
        let g = prior.len();
        if !(1..=MAX_GRASPS).contains(&g) {
            return Err(SimError::BadParameter(format!("{g} grasps")));
        }
        check_rows("image_given_grasp", &image_given_grasp, g)?;
        check_rows("object_given_grasp", &object_given_grasp, g)?;
        Ok(Self {
            taxonomy: prior.taxonomy().clone(),
            prior,
            image_given_grasp,
            object_given_grasp,
        })
    }

    pub fn grasps(&self) -> usize {
        self.taxonomy.len()
    }

    pub fn images(&self) -> usize {
        self.image_given_grasp[0].len()
    }

    pub fn objects(&self) -> usize {
        self.object_given_grasp[0].len()
    }

    pub fn shape(&self) -> WorldShape {
        WorldShape {
            grasps: self.grasps(),
            images: self.images(),
            objects: self.objects(),
        }
    }

    fn emission(&self, cue: Cue) -> &[Vec<f64>] {
        match cue {
            Cue::Image => &self.image_given_grasp,
            Cue::Object => &self.object_given_grasp,
        }
    }

    /// Joint mass `p(g) p(i|g) p(o|g)`.
    pub fn joint(&self, g: usize, i: usize, o: usize) -> f64 {
        self.prior.probs()[g] * self.image_given_grasp[g][i] * self.object_given_grasp[g][o]
    }
}

/// Taxonomy of the first `grasps` focus labels.
pub fn sim_taxonomy(grasps: usize) -> Result<GraspTaxonomy, SimError> {
    if !(1..=MAX_GRASPS).contains(&grasps) {
        return Err(SimError::BadParameter(format!("grasp count {grasps}")));
    }
    Ok(GraspTaxonomy::new(FOCUS_LABELS[..grasps].iter().copied())?)
}

fn dirichlet_row(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>, len: usize) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // Tiny concentrations can underflow every draw to zero; redraw.
        if sum > 0.0 && sum.is_finite() {
            return draws.iter().map(|x| x / sum).collect();
        }
    }
}

/// Draws a world whose prior and emission rows are symmetric-Dirichlet
/// samples with the given concentration.
pub fn generate_world(seed: u64, shape: WorldShape, concentration: f64) -> Result<World, SimError> {
    let shape = WorldShape::new(shape.grasps, shape.images, shape.objects)?;
    if !(concentration.is_finite() && concentration > 0.0) {
        return Err(SimError::BadParameter(format!(
            "concentration {concentration} must be > 0"
        )));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| SimError::BadParameter(format!("concentration: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taxonomy = sim_taxonomy(shape.grasps)?;
    let prior = normalize(&dirichlet_row(&mut rng, &gamma, shape.grasps), &taxonomy)?;
    let image_given_grasp = (0..shape.grasps)
        .map(|_| dirichlet_row(&mut rng, &gamma, shape.images))
        .collect();
    let object_given_grasp = (0..shape.grasps)
        .map(|_| dirichlet_row(&mut rng, &gamma, shape.objects))
        .collect();
    World::new(prior, image_given_grasp, object_given_grasp)
}

/// Shape drawn uniformly from the supported ranges, keyed by `seed`.
pub fn random_shape(seed: u64) -> WorldShape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    WorldShape {
        grasps: rng.random_range(2..=MAX_GRASPS),
        images: rng.random_range(2..=MAX_SYMBOLS),
        objects: rng.random_range(2..=MAX_SYMBOLS),
    }
}

/// `p(g|i,o)` by direct enumeration of the joint.
pub fn exact_posterior(
    world: &World,
    image: usize,
    object: usize,
) -> Result<GraspDistribution, SimError> {
    if image >= world.images() || object >= world.objects() {
        return Err(SimError::BadParameter(format!(
            "symbol ({image}, {object}) out of range"
        )));
    }
    let weights: Vec<f64> = (0..world.grasps())
        .map(|g| world.joint(g, image, object))
        .collect();
    normalize(&weights, &world.taxonomy).map_err(|_| SimError::ImpossibleObservation {
        image: Some(image),
        object: Some(object),
    })
}

/// `p(g|i)` or `p(g|o)` from one cue.
pub fn cue_posterior(
    world: &World,
    cue: Cue,
    symbol: usize,
) -> Result<GraspDistribution, SimError> {
    let emission = world.emission(cue);
    if symbol >= emission[0].len() {
        return Err(SimError::BadParameter(format!(
            "{cue:?} symbol {symbol} out of range"
        )));
    }
    let weights: Vec<f64> = (0..world.grasps())
        .map(|g| world.prior.probs()[g] * emission[g][symbol])
        .collect();
    normalize(&weights, &world.taxonomy).map_err(|_| match cue {
        Cue::Image => SimError::ImpossibleObservation {
            image: Some(symbol),
            object: None,
        },
        Cue::Object => SimError::ImpossibleObservation {
            image: None,
            object: Some(symbol),
        },
    })
}

fn cue_posteriors(world: &World, cue: Cue) -> Vec<Option<GraspDistribution>> {
    (0..world.emission(cue)[0].len())
        .map(|s| cue_posterior(world, cue, s).ok())
        .collect()
}

fn observation_mass(world: &World, image: usize, object: usize) -> f64 {
    (0..world.grasps())
        .map(|g| world.joint(g, image, object))
        .sum()
}

/// Largest element-wise gap between the fused cue posteriors and the exact
/// posterior, over every observation pair with positive mass.
pub fn check_eq1(world: &World) -> f64 {
    let by_image = cue_posteriors(world, Cue::Image);
    let by_object = cue_posteriors(world, Cue::Object);
    let mut worst: f64 = 0.0;
    for (i, pi) in by_image.iter().enumerate() {
        for (o, po) in by_object.iter().enumerate() {
            if observation_mass(world, i, o) <= 0.0 {
                continue;
            }
            let exact = exact_posterior(world, i, o).expect("positive mass");
            let (Some(pi), Some(po)) = (pi, po) else {
                return f64::INFINITY;
            };
            let err = match fuse(pi, po, &world.prior) {
                Ok(fused) => fused.max_abs_diff(&exact),
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    worst
}

/// Probability that `rule` names the true grasp, by full enumeration.
pub fn expected_accuracy(world: &World, rule: Rule) -> f64 {
    let by_image = cue_posteriors(world, Cue::Image);
    let by_object = cue_posteriors(world, Cue::Object);
    let mut acc = 0.0;
    for (i, pi) in by_image.iter().enumerate() {
        for (o, po) in by_object.iter().enumerate() {
            if observation_mass(world, i, o) <= 0.0 {
                continue;
            }
            let decision = match rule {
                Rule::Cnn => pi.as_ref().map(|d| argmax_index(d.probs())),
                Rule::Affordance => po.as_ref().map(|d| argmax_index(d.probs())),
                Rule::Fused => match (pi, po) {
                    (Some(pi), Some(po)) => fuse(pi, po, &world.prior)
                        .ok()
                        .map(|d| argmax_index(d.probs())),
                    _ => None,
                },
            };
            if let Some(g) = decision {
                acc += world.joint(g, i, o);
            }
        }
    }
    acc
}

/// One draw from a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub grasp: usize,
    pub image_symbol: usize,
    pub object_symbol: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub samples: Vec<Sample>,
    /// Per-sample `p(g|i)` with the true grasp attached.
    pub scores: ScoreFile,
    /// `(object, grasp)` pairs from the same samples, for building an affordance database.
    pub records: Vec<AffordanceRecord>,
}

pub fn object_name(symbol: usize) -> String {
    format!("obj_{symbol}")
}

/// Draws `n` samples and turns them into pipeline inputs.
pub fn sample_dataset(world: &World, n: usize, seed: u64) -> Result<SimDataset, SimError> {
    if n == 0 {
        return Err(SimError::BadParameter("n must be >= 1".into()));
    }
    let weighted = |row: &[f64]| {
        WeightedIndex::new(row).map_err(|e| SimError::BadParameter(format!("weights: {e}")))
    };
    let grasp_dist = weighted(world.prior.probs())?;
    let image_dists = world
        .image_given_grasp
        .iter()
        .map(|r| weighted(r))
        .collect::<Result<Vec<_>, _>>()?;
    let object_dists = world
        .object_given_grasp
        .iter()
        .map(|r| weighted(r))
        .collect::<Result<Vec<_>, _>>()?;
    let by_image = cue_posteriors(world, Cue::Image);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len();
    let mut samples = Vec::with_capacity(n);
    let mut scores = ScoreFile::new(world.taxonomy.clone());
    let mut records = Vec::with_capacity(n);
    for k in 0..n {
        let g = grasp_dist.sample(&mut rng);
        let s = Sample {
            grasp: g,
            image_symbol: image_dists[g].sample(&mut rng),
            object_symbol: object_dists[g].sample(&mut rng),
        };
        let label = world.taxonomy.label(g).to_string();
        let object = object_name(s.object_symbol);
        let posterior = by_image[s.image_symbol]
            .clone()
            .expect("sampled image symbol has positive mass");
        scores.records.push(ScoreRecord {
            image_id: format!("img_{k:0width$}"),
            object_name: object.clone(),
            true_grasp: Some(label.clone()),
            scores: posterior,
        });
        records.push(AffordanceRecord::new(object, label));
        samples.push(s);
    }
    Ok(SimDataset {
        samples,
        scores,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub cnn: f64,
    pub affordance: f64,
    pub fused: f64,
}

/// Per-world outcome of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub shape: WorldShape,
    pub eq1_max_abs_error: f64,
    pub accuracy: Accuracies,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub base_seed: u64,
    pub worlds: usize,
    /// Fixed counts; `None` draws each from its supported range per world.
    pub grasps: Option<usize>,
    pub images: Option<usize>,
    pub objects: Option<usize>,
    pub concentration: f64,
}

impl SweepConfig {
    pub fn new(base_seed: u64, worlds: usize) -> Self {
        Self {
            base_seed,
            worlds,
            grasps: None,
            images: None,
            objects: None,
            concentration: 1.0,
        }
    }

    pub fn world_seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }

    pub fn shape_for(&self, seed: u64) -> Result<WorldShape, SimError> {
        let r = random_shape(seed);
        WorldShape::new(
            self.grasps.unwrap_or(r.grasps),
            self.images.unwrap_or(r.images),
            self.objects.unwrap_or(r.objects),
        )
    }

    pub fn world(&self, index: usize) -> Result<World, SimError> {
        let seed = self.world_seed(index);
        generate_world(seed, self.shape_for(seed)?, self.concentration)
    }
}

/// Checks both the fusion identity and fused-rule dominance on one world.
pub fn evaluate_world(seed: u64, world: &World) -> SweepRow {
    let eq1 = check_eq1(world);
    let accuracy = Accuracies {
        cnn: expected_accuracy(world, Rule::Cnn),
        affordance: expected_accuracy(world, Rule::Affordance),
        fused: expected_accuracy(world, Rule::Fused),
    };
    let pass = eq1 <= EQ1_TOL
        && accuracy.fused >= accuracy.cnn - DOMINANCE_TOL
        && accuracy.fused >= accuracy.affordance - DOMINANCE_TOL;
    SweepRow {
        seed,
        shape: world.shape(),
        eq1_max_abs_error: eq1,
        accuracy,
        pass,
    }
}

/// Generates and checks `config.worlds` worlds; rows come back in seed order.
pub fn run_sweep(
    config: &SweepConfig,
    exec: Execution,
) -> Result<Vec<(World, SweepRow)>, SimError> {
    if config.worlds == 0 {
        return Err(SimError::BadParameter("worlds must be >= 1".into()));
    }
    // Validate fixed counts and concentration once, up front.
    config.world(0)?;
    let indices: Vec<usize> = (0..config.worlds).collect();
    exec.map(&indices, |&k| {
        let world = config.world(k)?;
        let row = evaluate_world(config.world_seed(k), &world);
        Ok((world, row))
    })
    .into_iter()
    .collect()
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    seed: Option<u64>,
    taxonomy: Vec<String>,
    prior: Vec<f64>,
    image_given_grasp: Vec<Vec<f64>>,
    object_given_grasp: Vec<Vec<f64>>,
}

impl World {
    /// Single-line JSON with the full matrices.
    pub fn to_json(&self, seed: Option<u64>) -> String {
        serde_json::to_string(&WorldFile {
            seed,
            taxonomy: self.taxonomy.labels().to_vec(),
            prior: self.prior.probs().to_vec(),
            image_given_grasp: self.image_given_grasp.clone(),
            object_given_grasp: self.object_given_grasp.clone(),
        })
        .expect("world serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let f: WorldFile =
            serde_json::from_str(text).map_err(|e| SimError::BadParameter(e.to_string()))?;
        let taxonomy = GraspTaxonomy::new(f.taxonomy)?;
        let prior = GraspDistribution::new(taxonomy, f.prior)?;
        World::new(prior, f.image_given_grasp, f.object_given_grasp)
    }
}

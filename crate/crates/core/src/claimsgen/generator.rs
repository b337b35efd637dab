use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClaimsError, CodeSystem, EventRecord, PatientRecord, Sex};

const MED_VARIANTS: usize = 3;
const DAYS_PER_YEAR: f64 = 365.25;

/// Knobs for the synthetic cohort.
///
/// Diseases are slow latent processes with noisy, long-range antecedent
/// codes; medications follow a recent diagnosis deterministically with
/// probability `link_strength`. Two seeds are kept apart: `world_seed` fixes
/// the code tables (so task definitions stay valid across runs) and `seed`
/// drives the patients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub n_diag_codes: usize,
    /// Distinct 7-digit medication classes; each has a few 12-digit variants.
    pub n_med_codes: usize,
    pub n_latent: usize,
    /// Probability that a disease onset triggers its linked medication.
    pub link_strength: f64,
    pub link_max_delay_days: u32,
    /// Prevalence of the most common latent; the rest decay as a power law.
    pub top_prevalence: f64,
    /// Chance that each antecedent code of an active latent is recorded before onset.
    pub antecedent_rate: f64,
    pub events_median: f64,
    pub events_sigma: f64,
    pub span_median_days: f64,
    pub span_sigma: f64,
    pub age_mean_years: f64,
    pub age_sd_years: f64,
    /// Share of patients drawn from the younger mixture component.
    pub young_fraction: f64,
    pub zipf_exponent: f64,
    pub world_seed: u64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 10_000,
            n_diag_codes: 300,
            n_med_codes: 250,
            n_latent: 12,
            link_strength: 0.9,
            link_max_delay_days: 30,
            top_prevalence: 0.45,
            antecedent_rate: 0.5,
            events_median: 10.0,
            events_sigma: 0.9,
            span_median_days: 900.0,
            span_sigma: 0.9,
            age_mean_years: 76.0,
            age_sd_years: 9.0,
            young_fraction: 0.25,
            zipf_exponent: 1.05,
            world_seed: 0,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ClaimsError> {
        let bad = |m: &str| Err(ClaimsError::Config(m.to_string()));
        for (name, p) in [
            ("link_strength", self.link_strength),
            ("top_prevalence", self.top_prevalence),
            ("antecedent_rate", self.antecedent_rate),
            ("young_fraction", self.young_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must be a probability, got {p}"));
            }
        }
        if self.n_latent == 0 {
            return bad("n_latent must be positive");
        }
        if self.n_diag_codes < 4 * self.n_latent {
            return bad("n_diag_codes must be at least 4 × n_latent");
        }
        if self.n_med_codes < 2 * self.n_latent {
            return bad("n_med_codes must be at least 2 × n_latent");
        }
        if self.n_diag_codes > 20_000 || self.n_med_codes > 100_000 {
            return bad("code table too large");
        }
        let positive = [
            ("events_median", self.events_median),
            ("events_sigma", self.events_sigma),
            ("span_median_days", self.span_median_days),
            ("span_sigma", self.span_sigma),
            ("age_sd_years", self.age_sd_years),
            ("zipf_exponent", self.zipf_exponent),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive, got {v}"));
            }
        }
        if self.link_max_delay_days == 0 {
            return bad("link_max_delay_days must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Latent {
    pub prevalence: f64,
    pub primary_diag: usize,
    pub comorbid: Vec<usize>,
    pub antecedents: Vec<usize>,
    pub linked_med: usize,
}

/// Code tables and latent disease structure, fixed by `world_seed`.
#[derive(Clone, Debug)]
pub struct CodeWorld {
    pub diag_codes: Vec<String>,
    /// 7-digit class prefixes.
    pub med_classes: Vec<String>,
    med_suffixes: Vec<[String; MED_VARIANTS]>,
    pub latents: Vec<Latent>,
    bg_diag: Vec<usize>,
    bg_diag_w: WeightedIndex<f64>,
    bg_med: Vec<usize>,
    bg_med_w: WeightedIndex<f64>,
}

impl CodeWorld {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self, ClaimsError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.world_seed);
        let diag_codes = unique_codes(cfg.n_diag_codes, &mut rng, random_icd);
        let med_classes = unique_codes(cfg.n_med_codes, &mut rng, |r| {
            format!("{}{:06}", r.random_range(1..=8u32), r.random_range(0..1_000_000u32))
        });
        let med_suffixes = (0..cfg.n_med_codes)
            .map(|_| std::array::from_fn(|_| format!("{:05}", rng.random_range(0..100_000u32))))
            .collect();

        let mut diag_order: Vec<usize> = (0..cfg.n_diag_codes).collect();
        shuffle(&mut diag_order, &mut rng);
        let mut med_order: Vec<usize> = (0..cfg.n_med_codes).collect();
        shuffle(&mut med_order, &mut rng);
        let (primary, bg_diag) = diag_order.split_at(cfg.n_latent);
        let (linked, bg_med) = med_order.split_at(cfg.n_latent);

        let latents = (0..cfg.n_latent)
            .map(|k| {
                let pick = |rng: &mut ChaCha8Rng, n| (0..n).map(|_| bg_diag[rng.random_range(0..bg_diag.len())]).collect();
                Latent {
                    prevalence: cfg.top_prevalence * ((k + 1) as f64).powf(-0.8),
                    primary_diag: primary[k],
                    comorbid: pick(&mut rng, 3),
                    antecedents: pick(&mut rng, 3),
                    linked_med: linked[k],
                }
            })
            .collect();
        let zipf = |n: usize| {
            WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-cfg.zipf_exponent))).expect("nonempty positive weights")
        };
        Ok(Self {
            bg_diag_w: zipf(bg_diag.len()),
            bg_med_w: zipf(bg_med.len()),
            bg_diag: bg_diag.to_vec(),
            bg_med: bg_med.to_vec(),
            diag_codes,
            med_classes,
            med_suffixes,
            latents,
        })
    }

    pub fn primary_code(&self, latent: usize) -> &str {
        &self.diag_codes[self.latents[latent].primary_diag]
    }

    /// Canonical 12-digit code of the first prescription after onset.
    pub fn linked_med_code(&self, latent: usize) -> String {
        self.med_code(self.latents[latent].linked_med, 0)
    }

    /// 7-digit class of the linked medication.
    pub fn linked_med_class(&self, latent: usize) -> &str {
        &self.med_classes[self.latents[latent].linked_med]
    }

    fn med_code(&self, class: usize, variant: usize) -> String {
        format!("{}{}", self.med_classes[class], self.med_suffixes[class][variant])
    }
}

fn random_icd(rng: &mut ChaCha8Rng) -> String {
    const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTVWXYZ";
    let mut s = String::with_capacity(5);
    s.push(LETTERS[rng.random_range(0..LETTERS.len())] as char);
    let extra = rng.random_range(2..=4);
    for _ in 0..extra {
        s.push(char::from(b'0' + rng.random_range(0..10u8)));
    }
    s
}

fn unique_codes(n: usize, rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> String) -> Vec<String> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = draw(rng);
        if seen.insert(c.clone()) {
            out.push(c);
        }
    }
    out
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

/// Onset of a latent disease inside a patient's history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Onset {
    pub latent: usize,
    pub age_days: u32,
}

#[derive(Clone, Debug)]
pub struct GeneratedPatient {
    pub record: PatientRecord,
    pub onsets: Vec<Onset>,
}

/// Generates patient `index` from its own child stream of `cfg.seed`, so any
/// subset of patients can be produced independently and in parallel.
pub fn generate_patient(world: &CodeWorld, cfg: &GeneratorConfig, index: usize) -> GeneratedPatient {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let sex = if rng.random_bool(0.5) { Sex::M } else { Sex::F };
    let age_years = if rng.random_bool(cfg.young_fraction) {
        Normal::new(45.0, 18.0).unwrap().sample(&mut rng)
    } else {
        Normal::new(cfg.age_mean_years, cfg.age_sd_years).unwrap().sample(&mut rng)
    }
    .clamp(0.0, 100.0);
    let start = (age_years * DAYS_PER_YEAR) as u32;
    let n_bg = LogNormal::new(cfg.events_median.ln(), cfg.events_sigma)
        .unwrap()
        .sample(&mut rng)
        .round()
        .clamp(1.0, 2000.0) as usize;
    let n_visits = n_bg.div_ceil(3).max(1);
    let span = if n_visits == 1 {
        0
    } else {
        LogNormal::new(cfg.span_median_days.ln(), cfg.span_sigma)
            .unwrap()
            .sample(&mut rng)
            .clamp(1.0, 6000.0) as u32
    };
    let end = start + span;

    let mut visits = Vec::with_capacity(n_visits);
    visits.push(start);
    if n_visits > 1 {
        visits.push(end);
    }
    while visits.len() < n_visits {
        visits.push(rng.random_range(start..=end));
    }
    visits.sort_unstable();

    let mut events = Vec::with_capacity(n_bg * 2);
    let diag = |i: usize| EventRecord { code: world.diag_codes[i].clone(), system: CodeSystem::Diagnosis, age_days: 0 };
    for _ in 0..n_bg {
        let age = visits[rng.random_range(0..visits.len())];
        let ev = if rng.random_bool(0.55) {
            diag(world.bg_diag[world.bg_diag_w.sample(&mut rng)])
        } else {
            let class = world.bg_med[world.bg_med_w.sample(&mut rng)];
            let variant = rng.random_range(0..MED_VARIANTS);
            EventRecord { code: world.med_code(class, variant), system: CodeSystem::Medication, age_days: 0 }
        };
        events.push(EventRecord { age_days: age, ..ev });
    }

    let age_factor = (0.4 + 0.6 * (age_years / 80.0)).min(1.15);
    let early = start.saturating_sub(span / 4);
    let mut onsets = Vec::new();
    for (k, lat) in world.latents.iter().enumerate() {
        if !rng.random_bool((lat.prevalence * age_factor).min(1.0)) {
            continue;
        }
        let onset = rng.random_range(early..=end).max(start);
        onsets.push(Onset { latent: k, age_days: onset });
        for &a in &lat.antecedents {
            if rng.random_bool(cfg.antecedent_rate) {
                let back = rng.random_range(60..=1000u32);
                if onset >= start + back {
                    events.push(EventRecord { age_days: onset - back, ..diag(a) });
                }
            }
        }
        events.push(EventRecord { age_days: onset, ..diag(lat.primary_diag) });
        let mut t = onset + rng.random_range(60..=180u32);
        while t <= end {
            if rng.random_bool(0.6) {
                events.push(EventRecord { age_days: t, ..diag(lat.primary_diag) });
            }
            for &c in &lat.comorbid {
                if rng.random_bool(0.2) {
                    events.push(EventRecord { age_days: t, ..diag(c) });
                }
            }
            t += rng.random_range(60..=180u32);
        }
        if rng.random_bool(cfg.link_strength) {
            let first = onset + rng.random_range(1..=cfg.link_max_delay_days);
            events.push(EventRecord {
                code: world.med_code(lat.linked_med, 0),
                system: CodeSystem::Medication,
                age_days: first,
            });
            let mut t = first + rng.random_range(28..=90u32);
            while t <= end {
                events.push(EventRecord {
                    code: world.med_code(lat.linked_med, rng.random_range(0..MED_VARIANTS)),
                    system: CodeSystem::Medication,
                    age_days: t,
                });
                t += rng.random_range(28..=90u32);
            }
        }
    }

    let mut record = PatientRecord { patient_id: format!("P{index:07}"), sex, events };
    record.sort_events();
    GeneratedPatient { record, onsets }
}

/// Deterministic synthetic cohort; `n_patients = 0` yields an empty cohort.
pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<Vec<PatientRecord>, ClaimsError> {
    let world = CodeWorld::new(cfg)?;
    Ok((0..cfg.n_patients).into_par_iter().map(|i| generate_patient(&world, cfg, i).record).collect())
}

//! Seeded synthetic trajectory world.
//!
//! Rooms have unit-norm anchor vectors; a trajectory visits a random room
//! sequence ending at the target room, and each step's feature is the room
//! anchor plus Gaussian noise. The final observation's detections list the
//! target object first, followed by up to `max_distractors` other objects
//! of the same room. References instantiate templates such as
//! "go to the {room} and {verb} the {object}". Because the latent room and
//! object are stored with each episode, any generated instruction can be
//! checked for whether it names them.

use std::collections::HashSet;
use std::path::Path;

use navinstruct_tensor::Stream;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Episode, Trajectory, Truth};
use crate::error::{CoreError, Result};
use crate::text;

const DOMAIN_ANCHORS: u64 = 1;
const DOMAIN_ROOM_OBJECTS: u64 = 2;
const DOMAIN_EPISODE: u64 = 3;

const ANCHOR_MAX_COSINE: f64 = 0.5;
const ANCHOR_ATTEMPTS: usize = 10_000;

const DEFAULT_ROOMS: [&str; 8] = [
    "kitchen", "bathroom", "bedroom", "hallway", "office", "garage", "lounge", "pantry",
];
const DEFAULT_OBJECTS: [&str; 12] = [
    "sink", "faucet", "lamp", "towel", "pillow", "mirror", "chair", "table", "plant", "clock",
    "vase", "shelf",
];
const DEFAULT_VERBS: [&str; 6] = ["clean", "open", "touch", "inspect", "move", "wipe"];
const DEFAULT_TEMPLATES: [&str; 5] = [
    "go to the {room} and {verb} the {object}",
    "walk into the {room} and {verb} the {object}",
    "enter the {room} , then {verb} the {object}",
    "find the {object} in the {room} and {verb} it",
    "head to the {room} and {verb} the {object} there",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldOverrides {
    pub rooms: Option<Vec<String>>,
    pub objects: Option<Vec<String>>,
    pub verbs: Option<Vec<String>>,
    pub templates: Option<Vec<String>>,
    pub d_img: Option<usize>,
    pub noise: Option<f64>,
    pub t_min: Option<usize>,
    pub t_max: Option<usize>,
    pub objects_per_room: Option<usize>,
    pub max_distractors: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub rooms: Vec<String>,
    pub objects: Vec<String>,
    pub verbs: Vec<String>,
    pub templates: Vec<String>,
    pub d_img: usize,
    pub noise: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub max_distractors: usize,
    /// One unit-norm anchor per room.
    pub anchors: Vec<Vec<f64>>,
    /// Object indices present in each room.
    pub room_objects: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEpisode {
    pub trajectory: Trajectory,
    pub truth: Truth,
    pub room: usize,
    pub object: usize,
}

impl From<SynthEpisode> for Episode {
    fn from(e: SynthEpisode) -> Self {
        Episode {
            trajectory: e.trajectory,
            truth: Some(e.truth),
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn owned(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

pub fn build_world(seed: u64, overrides: &WorldOverrides) -> Result<WorldSpec> {
    let rooms = overrides.rooms.clone().unwrap_or_else(|| owned(&DEFAULT_ROOMS));
    let objects = overrides
        .objects
        .clone()
        .unwrap_or_else(|| owned(&DEFAULT_OBJECTS));
    let verbs = overrides.verbs.clone().unwrap_or_else(|| owned(&DEFAULT_VERBS));
    let templates = overrides
        .templates
        .clone()
        .unwrap_or_else(|| owned(&DEFAULT_TEMPLATES));
    let d_img = overrides.d_img.unwrap_or(32);
    let noise = overrides.noise.unwrap_or(0.1);
    let t_min = overrides.t_min.unwrap_or(3);
    let t_max = overrides.t_max.unwrap_or(8);
    let per_room = overrides.objects_per_room.unwrap_or(4);
    let max_distractors = overrides.max_distractors.unwrap_or(2);

    if rooms.is_empty() || objects.is_empty() || verbs.is_empty() || templates.is_empty() {
        return Err(CoreError::Invalid("world lists must be non-empty".into()));
    }
    if d_img == 0 || t_min == 0 || t_min > t_max || !(noise >= 0.0) {
        return Err(CoreError::Invalid(format!(
            "bad world shape: d_img={d_img} t=[{t_min},{t_max}] noise={noise}"
        )));
    }
    if per_room == 0 || per_room > objects.len() || max_distractors >= per_room.max(1) + 1 {
        return Err(CoreError::Invalid(format!(
            "objects_per_room={per_room} and max_distractors={max_distractors} do not fit {} objects",
            objects.len()
        )));
    }
    let mut seen = HashSet::new();
    for word in rooms.iter().chain(&objects).chain(&verbs) {
        let toks = text::tokenize(word);
        if toks.len() != 1 || toks[0] != *word {
            return Err(CoreError::Invalid(format!(
                "world word {word:?} must be a single lowercase token"
            )));
        }
        if !seen.insert(word.clone()) {
            return Err(CoreError::Invalid(format!(
                "{word:?} appears in more than one world list"
            )));
        }
    }
    for t in &templates {
        for tok in text::tokenize(&t.replace(['{', '}'], " ")) {
            if !["room", "verb", "object"].contains(&tok.as_str()) && seen.contains(&tok) {
                return Err(CoreError::Invalid(format!(
                    "template word {tok:?} collides with a room/object/verb"
                )));
            }
        }
    }

    let mut rng = Stream::new(seed, DOMAIN_ANCHORS, 0);
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(rooms.len());
    for r in 0..rooms.len() {
        let mut accepted = None;
        for _ in 0..ANCHOR_ATTEMPTS {
            let mut v: Vec<f64> = (0..d_img).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            if anchors.iter().all(|a| cosine(a, &v) < ANCHOR_MAX_COSINE) {
                accepted = Some(v);
                break;
            }
        }
        match accepted {
            Some(v) => anchors.push(v),
            None => {
                return Err(CoreError::Invalid(format!(
                    "could not place anchor {r} of {} rooms in {d_img} dimensions with cosine < {ANCHOR_MAX_COSINE}",
                    rooms.len()
                )))
            }
        }
    }

    let mut rng = Stream::new(seed, DOMAIN_ROOM_OBJECTS, 0);
    let mut perm: Vec<usize> = (0..objects.len()).collect();
    rng.shuffle(&mut perm);
    let room_objects = (0..rooms.len())
        .map(|r| {
            (0..per_room)
                .map(|j| perm[(r * per_room + j) % objects.len()])
                .collect()
        })
        .collect();

    Ok(WorldSpec {
        seed,
        rooms,
        objects,
        verbs,
        templates,
        d_img,
        noise,
        t_min,
        t_max,
        max_distractors,
        anchors,
        room_objects,
    })
}

impl WorldSpec {
    /// Room whose anchor has the highest cosine with `feature`.
    pub fn nearest_room(&self, feature: &[f64]) -> usize {
        let mut best = 0;
        let mut best_cos = f64::NEG_INFINITY;
        for (i, a) in self.anchors.iter().enumerate() {
            let c = cosine(a, feature);
            if c > best_cos {
                best_cos = c;
                best = i;
            }
        }
        best
    }

    fn instantiate(&self, template: &str, room: usize, verb: usize, object: usize) -> String {
        template
            .replace("{room}", &self.rooms[room])
            .replace("{verb}", &self.verbs[verb])
            .replace("{object}", &self.objects[object])
    }

    /// Every word any reference can contain.
    pub fn reference_vocabulary(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .templates
            .iter()
            .flat_map(|t| text::tokenize(&t.replace("{room}", " ").replace("{verb}", " ").replace("{object}", " ")))
            .collect();
        words.extend(self.rooms.iter().cloned());
        words.extend(self.objects.iter().cloned());
        words.extend(self.verbs.iter().cloned());
        words.sort();
        words.dedup();
        words
    }

    pub fn sample_episode(&self, id: String, rng: &mut Stream) -> SynthEpisode {
        let steps = self.t_min + rng.below(self.t_max - self.t_min + 1);
        let room = rng.below(self.rooms.len());
        let in_room = &self.room_objects[room];
        let object = in_room[rng.below(in_room.len())];

        let mut path = Vec::with_capacity(steps);
        for _ in 0..steps - 1 {
            path.push(rng.below(self.rooms.len()));
        }
        path.push(room);
        let features = path
            .iter()
            .map(|&r| {
                self.anchors[r]
                    .iter()
                    .map(|a| a + self.noise * rng.normal())
                    .collect()
            })
            .collect();

        let mut others: Vec<usize> = in_room.iter().copied().filter(|&o| o != object).collect();
        rng.shuffle(&mut others);
        let n_distractors = rng.below(self.max_distractors.min(others.len()) + 1);
        let mut objects = vec![self.objects[object].clone()];
        objects.extend(others[..n_distractors].iter().map(|&o| self.objects[o].clone()));

        let n_refs = 1 + rng.below(data::MAX_REFERENCES);
        let references = (0..n_refs)
            .map(|_| {
                let t = rng.below(self.templates.len());
                let v = rng.below(self.verbs.len());
                self.instantiate(&self.templates[t], room, v, object)
            })
            .collect();

        SynthEpisode {
            trajectory: Trajectory {
                id,
                features,
                objects,
                references,
            },
            truth: Truth {
                room: self.rooms[room].clone(),
                object: self.objects[object].clone(),
            },
            room,
            object,
        }
    }

    /// Episode `index` of the world's corpus for `seed`; independent of
    /// every other index.
    pub fn episode(&self, seed: u64, index: usize) -> SynthEpisode {
        let mut rng = Stream::new(seed, DOMAIN_EPISODE, index as u64);
        self.sample_episode(format!("ep{index:06}"), &mut rng)
    }

    pub fn corpus(&self, seed: u64, count: usize) -> Vec<SynthEpisode> {
        (0..count).map(|i| self.episode(seed, i)).collect()
    }
}

/// 80/20 train/validation split keyed on a hash of the episode id.
pub fn is_validation(id: &str) -> bool {
    Sha256::digest(id.as_bytes())[0] % 5 == 0
}

/// Whether `text` names the true room and the true object, at token level.
pub fn mentions_truth(text: &str, truth: &Truth) -> (bool, bool) {
    let toks = text::tokenize(text);
    (
        toks.iter().any(|t| *t == truth.room),
        toks.iter().any(|t| *t == truth.object),
    )
}

pub fn export_jsonl(episodes: &[Episode], path: &Path, config: serde_json::Value) -> Result<()> {
    data::write_episodes(path, episodes, config)
}

pub fn import_jsonl(path: &Path) -> Result<Vec<Episode>> {
    data::read_episodes(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let a = build_world(3, &WorldOverrides::default()).unwrap();
        let b = build_world(3, &WorldOverrides::default()).unwrap();
        assert_eq!(a, b);
        let bits = |w: &WorldSpec| {
            w.anchors
                .iter()
                .flatten()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&build_world(4, &WorldOverrides::default()).unwrap()));
    }

    #[test]
    fn default_anchors_are_spread() {
        let w = build_world(0, &WorldOverrides::default()).unwrap();
        assert_eq!(w.anchors.len(), 8);
        for (i, a) in w.anchors.iter().enumerate() {
            assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            for b in &w.anchors[i + 1..] {
                assert!(cosine(a, b) < 0.5);
            }
        }
    }

    #[test]
    fn too_many_rooms_for_width() {
        let overrides = WorldOverrides {
            d_img: Some(2),
            rooms: Some((0..50).map(|i| format!("room{i}")).collect()),
            ..Default::default()
        };
        assert!(build_world(0, &overrides).is_err());
    }

    #[test]
    fn overlapping_lists_rejected() {
        let overrides = WorldOverrides {
            verbs: Some(vec!["kitchen".into()]),
            ..Default::default()
        };
        assert!(build_world(0, &overrides).is_err());
        let overrides = WorldOverrides {
            verbs: Some(vec!["go".into()]),
            ..Default::default()
        };
        assert!(build_world(0, &overrides).is_err());
    }

    #[test]
    fn zero_noise_features_are_anchors() {
        let w = build_world(
            1,
            &WorldOverrides {
                noise: Some(0.0),
                ..Default::default()
            },
        )
        .unwrap();
        for ep in w.corpus(5, 50) {
            for f in &ep.trajectory.features {
                assert!(w.anchors.iter().any(|a| a == f));
            }
            assert_eq!(ep.trajectory.features.last().unwrap(), &w.anchors[ep.room]);
        }
    }

    #[test]
    fn references_name_room_and_object() {
        let w = build_world(2, &WorldOverrides::default()).unwrap();
        for ep in w.corpus(9, 300) {
            let t = &ep.trajectory;
            assert!((w.t_min..=w.t_max).contains(&t.steps()));
            assert!((1..=3).contains(&t.references.len()));
            assert_eq!(t.objects[0], ep.truth.object);
            for r in &t.references {
                assert_eq!(mentions_truth(r, &ep.truth), (true, true), "{r}");
            }
        }
    }

    #[test]
    fn split_is_roughly_80_20() {
        let val = (0..5000)
            .filter(|i| is_validation(&format!("ep{i:06}")))
            .count();
        assert!((800..1200).contains(&val), "{val}");
    }
}

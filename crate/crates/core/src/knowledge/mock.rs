//! Deterministic chat backend for hermetic runs.

use rand::seq::SliceRandom;

use super::backend::{ChatBackend, ChatRequest, RequestIntent};
use crate::rng::Stream;

/// Fixture vocabulary the mock draws domain names from.
pub const DOMAIN_VOCABULARY: &[&str] = &[
    "cityscapes",
    "underwater",
    "snowfield",
    "cartoon",
    "oil painting",
    "pencil sketch",
    "watercolor",
    "fairytale",
    "desert",
    "rainforest",
    "night market",
    "medieval castle",
    "space station",
    "origami",
    "stained glass",
    "pixel art",
    "claymation",
    "mosaic",
    "graffiti wall",
    "foggy harbor",
    "autumn park",
    "kitchen counter",
    "living room",
    "farmyard",
    "mountain trail",
    "beach at sunset",
    "subway platform",
    "library",
    "museum exhibit",
    "snow globe",
    "thunderstorm",
    "neon city",
    "ancient ruins",
    "cave painting",
    "woodcut print",
    "comic book",
    "infrared photo",
    "x-ray scan",
    "embroidery",
    "sand sculpture",
    "ice sculpture",
    "bronze statue",
    "chalkboard drawing",
    "children's crayon drawing",
    "tattoo design",
    "vintage postcard",
    "blueprint",
    "sticker",
    "plush toy",
    "lego build",
    "3d render",
    "low-poly model",
    "ukiyo-e print",
    "art deco poster",
    "cyberpunk alley",
    "steampunk workshop",
    "circus tent",
    "carnival parade",
    "wedding photo",
    "sports stadium",
    "hospital ward",
    "classroom",
    "office cubicle",
    "airport terminal",
    "train window",
    "rooftop garden",
    "flower meadow",
    "bamboo forest",
    "savanna",
    "arctic tundra",
    "volcanic landscape",
    "coral reef",
    "swamp",
    "vineyard",
    "orchard",
    "rice terrace",
    "harbor market",
    "gothic cathedral",
    "zen garden",
    "tea house",
    "bakery window",
    "toy store",
    "flea market",
    "camping site",
    "haunted house",
    "lighthouse coast",
    "desert oasis",
    "canyon",
    "glacier lake",
    "misty valley",
    "rainy street",
    "snowy village",
    "sunlit attic",
    "moonlit field",
    "candlelit room",
    "shadow puppet",
    "silhouette art",
    "mural",
    "tapestry",
    "papercut art",
];

const STYLE_TOKENS: &[&str] = &[
    "a photo of",
    "a detailed painting of",
    "a wide-angle shot of",
    "a close-up of",
    "a cinematic frame of",
    "an illustration of",
    "a soft-focus picture of",
    "a high-contrast image of",
];

const DETAIL_TOKENS: &[&str] = &[
    "natural lighting",
    "highly detailed",
    "muted colors",
    "vivid colors",
    "shallow depth of field",
    "golden hour",
    "overcast light",
    "sharp focus",
    "film grain",
    "studio lighting",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MockBehavior {
    Normal,
    /// Every name in a response appears twice.
    Duplicates,
    /// Always answers with the same single name.
    Stuck,
    /// Answers without any list.
    Refuse,
    /// Transport failure.
    Fail,
}

#[derive(Clone, Debug)]
pub struct MockChatBackend {
    seed: u64,
    behavior: MockBehavior,
}

impl MockChatBackend {
    pub fn new(seed: u64) -> Self {
        MockChatBackend {
            seed,
            behavior: MockBehavior::Normal,
        }
    }

    pub fn with_behavior(seed: u64, behavior: MockBehavior) -> Self {
        MockChatBackend { seed, behavior }
    }

    fn stream(&self, request: &ChatRequest, subject: &str) -> Stream {
        Stream::new(self.seed).named(subject).child(request.seed.unwrap_or(0))
    }

    fn domains(&self, request: &ChatRequest, classes: &[String], count: usize) -> Vec<String> {
        let mut rng = self.stream(request, &classes.join("|")).rng();
        let mut vocab: Vec<&str> = DOMAIN_VOCABULARY.to_vec();
        vocab.shuffle(&mut rng);
        vocab.into_iter().take(count).map(str::to_string).collect()
    }

    fn prompts(&self, request: &ChatRequest, class: &str, domain: &str, count: usize) -> Vec<String> {
        let node = self.stream(request, &format!("{class}|{domain}"));
        (0..count as u64)
            .map(|i| {
                let key = node.child(i).draw_u64();
                let style = STYLE_TOKENS[(key % STYLE_TOKENS.len() as u64) as usize];
                let detail = DETAIL_TOKENS[((key >> 16) % DETAIL_TOKENS.len() as u64) as usize];
                format!(
                    "{style} a {class} in the domain of {domain}, {detail}, variation {}",
                    (key >> 32) % 1000
                )
            })
            .collect()
    }
}

impl ChatBackend for MockChatBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn default_temperature(&self) -> f64 {
        0.0
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, String> {
        let items = match (&request.intent, self.behavior) {
            (_, MockBehavior::Fail) => return Err("mock backend configured to fail".into()),
            (_, MockBehavior::Refuse) => return Ok("I cannot help with that".into()),
            (RequestIntent::Domains { classes, count }, _) => self.domains(request, classes, *count),
            (RequestIntent::Prompts { class, domain, count }, _) => self.prompts(request, class, domain, *count),
        };
        let items = match self.behavior {
            MockBehavior::Duplicates => items
                .iter()
                .take(items.len().div_ceil(2))
                .flat_map(|s| [s.clone(), s.to_uppercase()])
                .collect(),
            MockBehavior::Stuck => vec![DOMAIN_VOCABULARY[0].to_string()],
            _ => items,
        };
        Ok(serde_json::to_string(&items).expect("strings serialize"))
    }
}

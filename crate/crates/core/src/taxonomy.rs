//! The closed dialogue-act registry.
//!
//! Exactly 18 acts exist. Each carries the category it belongs to, a short
//! explanation used verbatim in prompts, an example utterance, and a flag for
//! acts that in practice only the robot produces. The set is closed by
//! construction: there is no way to register a new act at runtime.

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// One of the 18 dialogue acts. Declaration order is the registry's canonical
/// display order and drives `Ord` (used for deterministic tie-breaking and
/// report layout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DialogueAct {
    Instruction,
    RequestForInstruction,
    RequestOtherInfo,
    RequestMore,
    InformationOnObjectDetails,
    RequestForObjectLocationAndOtherDetails,
    InformationOther,
    AlternateQuestions,
    Acknowledge,
    GreetingsSalutations,
    Confirm,
    MiscOther,
    Affirm,
    Deny,
    FeedbackPositive,
    FeedbackNegative,
    OtherInterfaceComment,
    NotifyFailure,
}

/// Broad grouping of acts, as used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActCategory {
    Instruction,
    #[serde(rename = "Object/Location")]
    ObjectLocation,
    Generic,
    Feedback,
    Interface,
}

impl ActCategory {
    pub fn label(self) -> &'static str {
        match self {
            ActCategory::Instruction => "Instruction",
            ActCategory::ObjectLocation => "Object/Location",
            ActCategory::Generic => "Generic",
            ActCategory::Feedback => "Feedback",
            ActCategory::Interface => "Interface",
        }
    }
}

/// Static metadata for one act.
pub struct ActInfo {
    pub act: DialogueAct,
    pub canonical_name: &'static str,
    pub aliases: &'static [&'static str],
    pub category: ActCategory,
    pub explanation: &'static str,
    pub example_utterance: &'static str,
    /// Acts that in the corpus are effectively reserved for the robot side.
    /// Reporting metadata only; never constrains prediction.
    pub robot_typical: bool,
}

pub const ACT_COUNT: usize = 18;

/// Every act, in canonical registry order.
pub const ALL_ACTS: [DialogueAct; ACT_COUNT] = [
    DialogueAct::Instruction,
    DialogueAct::RequestForInstruction,
    DialogueAct::RequestOtherInfo,
    DialogueAct::RequestMore,
    DialogueAct::InformationOnObjectDetails,
    DialogueAct::RequestForObjectLocationAndOtherDetails,
    DialogueAct::InformationOther,
    DialogueAct::AlternateQuestions,
    DialogueAct::Acknowledge,
    DialogueAct::GreetingsSalutations,
    DialogueAct::Confirm,
    DialogueAct::MiscOther,
    DialogueAct::Affirm,
    DialogueAct::Deny,
    DialogueAct::FeedbackPositive,
    DialogueAct::FeedbackNegative,
    DialogueAct::OtherInterfaceComment,
    DialogueAct::NotifyFailure,
];

static REGISTRY: [ActInfo; ACT_COUNT] = [
    ActInfo {
        act: DialogueAct::Instruction,
        canonical_name: "Instruction",
        aliases: &[],
        category: ActCategory::Instruction,
        explanation: "Tell the robot to do something or how to do it.",
        example_utterance: "fill the mug with coffee",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::RequestForInstruction,
        canonical_name: "RequestForInstruction",
        aliases: &["ReqForInstruction"],
        category: ActCategory::Instruction,
        explanation: "Ask what to do, either to start or to continue the task.",
        example_utterance: "what should I do today?",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::RequestOtherInfo,
        canonical_name: "RequestOtherInfo",
        aliases: &[],
        category: ActCategory::Instruction,
        explanation: "Ask for task details beyond object locations, such as quantities or preferences.",
        example_utterance: "How many slices of tomato?",
        robot_typical: true,
    },
    ActInfo {
        act: DialogueAct::RequestMore,
        canonical_name: "RequestMore",
        aliases: &[],
        category: ActCategory::Instruction,
        explanation: "Ask whether there is anything more to do.",
        example_utterance: "Is there anything else to do",
        robot_typical: true,
    },
    ActInfo {
        act: DialogueAct::InformationOnObjectDetails,
        canonical_name: "InformationOnObjectDetails",
        aliases: &["InfoObjectLocAndOD"],
        category: ActCategory::ObjectLocation,
        explanation: "State where an object is or details about it.",
        example_utterance: "knife is behind the sink",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::RequestForObjectLocationAndOtherDetails,
        canonical_name: "RequestForObjectLocationAndOtherDetails",
        aliases: &["ReqForObjLocAndOD"],
        category: ActCategory::ObjectLocation,
        explanation: "Ask where an object is or for details about it.",
        example_utterance: "where is the mug?",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::InformationOther,
        canonical_name: "InformationOther",
        aliases: &[],
        category: ActCategory::ObjectLocation,
        explanation: "Give task-relevant information that is not an object location.",
        example_utterance: "Mug is already clean",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::AlternateQuestions,
        canonical_name: "AlternateQuestions",
        aliases: &[],
        category: ActCategory::ObjectLocation,
        explanation: "Ask a question offering a choice between alternatives.",
        example_utterance: "yellow or blue mug?",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::Acknowledge,
        canonical_name: "Acknowledge",
        aliases: &[],
        category: ActCategory::Generic,
        explanation: "Acknowledge the other side's utterance or action.",
        example_utterance: "perfect",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::GreetingsSalutations,
        canonical_name: "Greetings/Salutations",
        aliases: &["Greetings", "Salutations"],
        category: ActCategory::Generic,
        explanation: "Greet the other side or open the conversation.",
        example_utterance: "hello",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::Confirm,
        canonical_name: "Confirm",
        aliases: &[],
        category: ActCategory::Generic,
        explanation: "Ask for confirmation before or after doing something.",
        example_utterance: "Should I clean the cup?",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::MiscOther,
        canonical_name: "MiscOther",
        aliases: &[],
        category: ActCategory::Generic,
        explanation: "Anything conversational that fits no other act.",
        example_utterance: "ta-da",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::Affirm,
        canonical_name: "Affirm",
        aliases: &[],
        category: ActCategory::Generic,
        explanation: "Answer a question positively.",
        example_utterance: "Yes",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::Deny,
        canonical_name: "Deny",
        aliases: &[],
        category: ActCategory::Generic,
        explanation: "Answer a question negatively or reject a proposal.",
        example_utterance: "No",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::FeedbackPositive,
        canonical_name: "FeedbackPositive",
        aliases: &[],
        category: ActCategory::Feedback,
        explanation: "Tell the other side it did well.",
        example_utterance: "great job",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::FeedbackNegative,
        canonical_name: "FeedbackNegative",
        aliases: &[],
        category: ActCategory::Feedback,
        explanation: "Tell the other side it did something wrong.",
        example_utterance: "that is not correct",
        robot_typical: false,
    },
    ActInfo {
        act: DialogueAct::OtherInterfaceComment,
        canonical_name: "OtherInterfaceComment",
        aliases: &[],
        category: ActCategory::Interface,
        explanation: "Talk about the controls or the interface itself.",
        example_utterance: "Which button opens drawer",
        robot_typical: true,
    },
    ActInfo {
        act: DialogueAct::NotifyFailure,
        canonical_name: "NotifyFailure",
        aliases: &[],
        category: ActCategory::Interface,
        explanation: "Report being unable to do something.",
        example_utterance: "not able to do it",
        robot_typical: false,
    },
];

static LOOKUP: LazyLock<HashMap<String, DialogueAct>> = LazyLock::new(|| {
    let mut map = HashMap::new();
    for info in &REGISTRY {
        let prev = map.insert(info.canonical_name.to_ascii_lowercase(), info.act);
        assert!(prev.is_none(), "canonical name collision: {}", info.canonical_name);
        for alias in info.aliases {
            let prev = map.insert(alias.to_ascii_lowercase(), info.act);
            assert!(prev.is_none(), "alias collision: {alias}");
        }
    }
    map
});

impl DialogueAct {
    pub fn info(self) -> &'static ActInfo {
        // Registry order matches ALL_ACTS order; index by position.
        let idx = ALL_ACTS.iter().position(|a| *a == self).expect("act in registry");
        &REGISTRY[idx]
    }

    pub fn canonical_name(self) -> &'static str {
        self.info().canonical_name
    }

    pub fn category(self) -> ActCategory {
        self.info().category
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

impl Serialize for DialogueAct {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.canonical_name())
    }
}

impl<'de> Deserialize<'de> for DialogueAct {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_act(&raw).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown dialogue act: {0:?}")]
pub struct UnknownActError(pub String);

/// Resolve free text to an act: trim, strip surrounding bracket/quote pairs,
/// then case-insensitive match against canonical names and aliases.
pub fn parse_act(text: &str) -> Result<DialogueAct, UnknownActError> {
    let normalized = strip_wrapping(text);
    LOOKUP
        .get(&normalized.to_ascii_lowercase())
        .copied()
        .ok_or_else(|| UnknownActError(text.to_string()))
}

fn strip_wrapping(text: &str) -> &str {
    let mut s = text.trim();
    loop {
        if s.len() >= 4 && s.starts_with("<<") && s.ends_with(">>") {
            s = s[2..s.len() - 2].trim();
            continue;
        }
        let stripped = s
            .strip_prefix('<')
            .and_then(|t| t.strip_suffix('>'))
            .or_else(|| s.strip_prefix('[').and_then(|t| t.strip_suffix(']')))
            .or_else(|| s.strip_prefix('(').and_then(|t| t.strip_suffix(')')))
            .or_else(|| s.strip_prefix('"').and_then(|t| t.strip_suffix('"')))
            .or_else(|| s.strip_prefix('\'').and_then(|t| t.strip_suffix('\'')));
        match stripped {
            Some(inner) if !inner.is_empty() => s = inner.trim(),
            _ => return s,
        }
    }
}

/// True exactly for the acts the robot side effectively owns in the corpus.
pub fn robot_typical(act: DialogueAct) -> bool {
    act.info().robot_typical
}

/// The fixed explanation block inserted into every prompt: one line per act,
/// registry order, each pairing the act with its explanation and example.
/// Deterministic across calls (golden-pinned).
pub fn explanation_block() -> String {
    let mut out = String::new();
    for (i, info) in REGISTRY.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "{}: {} Example: \"{}\"",
            info.canonical_name, info.explanation, info.example_utterance
        ));
    }
    out
}

pub fn all_infos() -> &'static [ActInfo; ACT_COUNT] {
    &REGISTRY
}

//! Shared identifiers and event metadata.

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseIdError {
    #[error("empty run label")]
    EmptyRunLabel,
    #[error("unknown data class `{0}`")]
    UnknownDataClass(String),
    #[error("expected `<run_label>:<REAL|SIM>`, got `{0}`")]
    Syntax(String),
    #[error("unknown component kind `{0}`")]
    UnknownComponent(String),
}

/// Real detector data or simulated (Monte Carlo) data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataClass {
    Real,
    Sim,
}

impl DataClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DataClass::Real => "REAL",
            DataClass::Sim => "SIM",
        }
    }
}

impl fmt::Display for DataClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataClass {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "REAL" => Ok(DataClass::Real),
            "SIM" => Ok(DataClass::Sim),
            other => Err(ParseIdError::UnknownDataClass(other.to_string())),
        }
    }
}

/// Identifies one federation: a data-taking run paired with real or
/// simulated data. Rendered as `run3:REAL`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FederationId {
    run_label: String,
    data_class: DataClass,
}

impl FederationId {
    pub fn new(run_label: impl Into<String>, data_class: DataClass) -> Result<Self, ParseIdError> {
        let run_label = run_label.into();
        if run_label.is_empty() {
            return Err(ParseIdError::EmptyRunLabel);
        }
        if run_label.contains([':', '\t', '\n', ' ']) {
            return Err(ParseIdError::Syntax(run_label));
        }
        Ok(Self {
            run_label,
            data_class,
        })
    }

    pub fn run_label(&self) -> &str {
        &self.run_label
    }

    pub fn data_class(&self) -> DataClass {
        self.data_class
    }
}

impl fmt::Display for FederationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.run_label, self.data_class)
    }
}

impl FromStr for FederationId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (label, class) = s
            .rsplit_once(':')
            .ok_or_else(|| ParseIdError::Syntax(s.to_string()))?;
        FederationId::new(label, class.parse()?)
    }
}

/// The eight persistent component types an event may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ComponentKind {
    Col = 0,
    Evt = 1,
    Evshdr = 2,
    Tag = 3,
    Aod = 4,
    Esd = 5,
    Raw = 6,
    Rec = 7,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 8] = [
        ComponentKind::Col,
        ComponentKind::Evt,
        ComponentKind::Evshdr,
        ComponentKind::Tag,
        ComponentKind::Aod,
        ComponentKind::Esd,
        ComponentKind::Raw,
        ComponentKind::Rec,
    ];

    /// Stable 3-bit wire code.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Col => "col",
            ComponentKind::Evt => "evt",
            ComponentKind::Evshdr => "evshdr",
            ComponentKind::Tag => "tag",
            ComponentKind::Aod => "aod",
            ComponentKind::Esd => "esd",
            ComponentKind::Raw => "raw",
            ComponentKind::Rec => "rec",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentKind {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseIdError::UnknownComponent(s.to_string()))
    }
}

/// Where one component of an event lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Locator {
    pub file_id: u64,
    pub offset: u64,
    pub length: u32,
}

/// Compact per-event metadata: identity plus one optional locator per
/// component kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventHeader {
    pub event_id: u64,
    pub run_number: u32,
    locators: [Option<Locator>; 8],
}

impl EventHeader {
    pub fn new(event_id: u64, run_number: u32) -> Self {
        Self {
            event_id,
            run_number,
            locators: [None; 8],
        }
    }

    pub fn with_component(mut self, kind: ComponentKind, locator: Locator) -> Self {
        self.set_component(kind, Some(locator));
        self
    }

    pub fn set_component(&mut self, kind: ComponentKind, locator: Option<Locator>) {
        self.locators[usize::from(kind.code())] = locator;
    }

    pub fn component(&self, kind: ComponentKind) -> Option<&Locator> {
        self.locators[usize::from(kind.code())].as_ref()
    }

    /// Present components in wire-code order.
    pub fn components(&self) -> impl Iterator<Item = (ComponentKind, &Locator)> {
        ComponentKind::ALL
            .iter()
            .zip(self.locators.iter())
            .filter_map(|(k, l)| l.as_ref().map(|l| (*k, l)))
    }

    pub fn component_count(&self) -> usize {
        self.locators.iter().filter(|l| l.is_some()).count()
    }
}

/// A pointer to one event inside a stream collection of some federation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventRef {
    pub federation: FederationId,
    pub collection_path: String,
    pub ordinal: u64,
}

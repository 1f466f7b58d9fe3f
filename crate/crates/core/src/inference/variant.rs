use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::types::{Concept, ConceptSpace, HyperParams, Track};

/// A feature channel the engine models with its own Gaussian noise and
/// appearance prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Subject,
    Action,
    /// Subject and action features concatenated, one noise model.
    Joint,
}

impl ChannelKind {
    pub fn dim(self, space: &ConceptSpace) -> usize {
        match self {
            ChannelKind::Subject => space.subject_dim,
            ChannelKind::Action => space.action_dim,
            ChannelKind::Joint => space.subject_dim + space.action_dim,
        }
    }

    pub fn extend_features(self, track: &Track, out: &mut Vec<f64>) {
        match self {
            ChannelKind::Subject => out.extend_from_slice(&track.subject_features),
            ChannelKind::Action => out.extend_from_slice(&track.action_features),
            ChannelKind::Joint => {
                out.extend_from_slice(&track.subject_features);
                out.extend_from_slice(&track.action_features);
            }
        }
    }

    /// Initial (noise, appearance) variances for this channel. The joint
    /// channel takes the dimension-weighted mean of the two concepts.
    pub fn initial_variances(self, space: &ConceptSpace, hp: &HyperParams) -> (f64, f64) {
        let of = |c: Concept| (hp.noise_var.get(c), hp.appearance_var.get(c));
        match self {
            ChannelKind::Subject => of(Concept::Subject),
            ChannelKind::Action => of(Concept::Action),
            ChannelKind::Joint => {
                let (ds, da) = (space.subject_dim as f64, space.action_dim as f64);
                let w = |s: f64, a: f64| (ds * s + da * a) / (ds + da);
                (
                    w(hp.noise_var.subject, hp.noise_var.action),
                    w(hp.appearance_var.subject, hp.appearance_var.action),
                )
            }
        }
    }
}

/// Model configurations: the full model and its ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Integrative channels and location constraints.
    #[serde(rename = "wsc-siibp")]
    WscSiibp,
    /// Integrative channels, no location-constraint penalties.
    #[serde(rename = "ws-siibp")]
    WsSiibp,
    /// Concatenated features, location constraints.
    #[serde(rename = "wsc-sibp")]
    WscSibp,
    /// Concatenated features, no location-constraint penalties.
    #[serde(rename = "ws-sibp")]
    WsSibp,
    /// Subject features and subject labels only.
    #[serde(rename = "ws-s")]
    WsS,
    /// Action features and action labels only.
    #[serde(rename = "ws-a")]
    WsA,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::WscSiibp,
        Variant::WsSiibp,
        Variant::WscSibp,
        Variant::WsSibp,
        Variant::WsS,
        Variant::WsA,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::WscSiibp => "wsc-siibp",
            Variant::WsSiibp => "ws-siibp",
            Variant::WscSibp => "wsc-sibp",
            Variant::WsSibp => "ws-sibp",
            Variant::WsS => "ws-s",
            Variant::WsA => "ws-a",
        }
    }

    pub fn channels(self) -> &'static [ChannelKind] {
        match self {
            Variant::WscSiibp | Variant::WsSiibp => &[ChannelKind::Subject, ChannelKind::Action],
            Variant::WscSibp | Variant::WsSibp => &[ChannelKind::Joint],
            Variant::WsS => &[ChannelKind::Subject],
            Variant::WsA => &[ChannelKind::Action],
        }
    }

    pub fn uses_location_constraints(self) -> bool {
        matches!(self, Variant::WscSiibp | Variant::WscSibp)
    }

    /// Single-concept variants see only their concept's part of each label.
    pub fn label_projection(self) -> Option<Concept> {
        match self {
            Variant::WsS => Some(Concept::Subject),
            Variant::WsA => Some(Concept::Action),
            _ => None,
        }
    }

    /// The hinge weight actually applied.
    pub fn effective_penalty(self, c: f64) -> f64 {
        if self.uses_location_constraints() {
            c
        } else {
            0.0
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == lower)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Validation(format!(
                    "unknown variant {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(
                serde_json::to_string(&v).unwrap(),
                format!("\"{}\"", v.name())
            );
        }
        assert!("wsc".parse::<Variant>().is_err());
    }

    #[test]
    fn joint_channel_weights_variances_by_dimension() {
        let space = ConceptSpace::new(1, 1, 0, 1, 3).unwrap();
        let mut hp = HyperParams::default();
        hp.noise_var.subject = 1.0;
        hp.noise_var.action = 5.0;
        let (n, a) = ChannelKind::Joint.initial_variances(&space, &hp);
        assert_eq!(n, 4.0);
        assert_eq!(a, 1.0);
        assert_eq!(ChannelKind::Joint.dim(&space), 4);
    }

    #[test]
    fn ws_variants_drop_penalty() {
        assert_eq!(Variant::WsSiibp.effective_penalty(3.0), 0.0);
        assert_eq!(Variant::WscSibp.effective_penalty(3.0), 3.0);
    }
}

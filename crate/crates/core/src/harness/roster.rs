use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::clients::{ClientKind, ClientRole};
use crate::data::LabelMapping;

/// The two attack-mix series: single-label flipping (`exp1`) or
/// multi-label flipping (`exp2`) as the targeted attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpSeries {
    Exp1,
    Exp2,
}

impl std::str::FromStr for ExpSeries {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exp1" => Ok(ExpSeries::Exp1),
            "exp2" => Ok(ExpSeries::Exp2),
            _ => Err(HarnessError::Config(format!("unknown series {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoleCounts {
    pub unreliable: usize,
    pub additive_noise: usize,
    pub sign_flip: usize,
    pub label_flip: usize,
    pub multi_label_flip: usize,
    pub normal: usize,
}

impl RoleCounts {
    pub fn malicious(&self) -> usize {
        self.additive_noise + self.sign_flip + self.label_flip + self.multi_label_flip
    }

    pub fn attackers_and_unreliable(&self) -> usize {
        self.malicious() + self.unreliable
    }

    pub fn total(&self) -> usize {
        self.attackers_and_unreliable() + self.normal
    }

    pub fn malicious_fraction(&self) -> f64 {
        self.malicious() as f64 / self.total() as f64
    }

    pub(crate) fn fill_normal(mut self, n_clients: usize) -> Result<Self, HarnessError> {
        let used = self.attackers_and_unreliable();
        if used > n_clients {
            return Err(HarnessError::Config(format!(
                "roster needs {used} clients but only {n_clients} exist"
            )));
        }
        self.normal = n_clients - used;
        Ok(self)
    }

    /// One role per client id, in the documented order.
    pub fn roles(
        &self,
        noise_sigma: f64,
        lf: &LabelMapping,
        mlf: &LabelMapping,
    ) -> Vec<ClientRole> {
        let mut out = Vec::with_capacity(self.total());
        out.extend(std::iter::repeat_n(ClientRole::Unreliable, self.unreliable));
        out.extend(std::iter::repeat_n(
            ClientRole::AdditiveNoise { sigma: noise_sigma },
            self.additive_noise,
        ));
        out.extend(std::iter::repeat_n(ClientRole::SignFlip, self.sign_flip));
        out.extend(std::iter::repeat_n(
            ClientRole::LabelFlip {
                mapping: lf.clone(),
            },
            self.label_flip,
        ));
        out.extend(std::iter::repeat_n(
            ClientRole::MultiLabelFlip {
                mapping: mlf.clone(),
            },
            self.multi_label_flip,
        ));
        out.extend(std::iter::repeat_n(ClientRole::Normal, self.normal));
        out
    }

    pub fn count(&self, kind: ClientKind) -> usize {
        match kind {
            ClientKind::Normal => self.normal,
            ClientKind::Unreliable => self.unreliable,
            ClientKind::SignFlip => self.sign_flip,
            ClientKind::AdditiveNoise => self.additive_noise,
            ClientKind::LabelFlip => self.label_flip,
            ClientKind::MultiLabelFlip => self.multi_label_flip,
        }
    }
}

/// Roster for step `i` (1..=6) of a series: `min(i,4)` unreliable,
/// `min(i,6)` additive noise, `min(i,5)` sign flip and `i+2` label or
/// multi-label flippers; everyone else is normal.
pub fn build_exp_series(
    series: ExpSeries,
    i: usize,
    n_clients: usize,
) -> Result<RoleCounts, HarnessError> {
    if !(1..=6).contains(&i) {
        return Err(HarnessError::BadIndex(i));
    }
    let targeted = i + 2;
    let counts = RoleCounts {
        unreliable: i.min(4),
        additive_noise: i.min(6),
        sign_flip: i.min(5),
        label_flip: if series == ExpSeries::Exp1 {
            targeted
        } else {
            0
        },
        multi_label_flip: if series == ExpSeries::Exp2 {
            targeted
        } else {
            0
        },
        normal: 0,
    };
    counts.fill_normal(n_clients)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(ur: usize, an: usize, sf: usize, lf: usize, mlf: usize, normal: usize) -> RoleCounts {
        RoleCounts {
            unreliable: ur,
            additive_noise: an,
            sign_flip: sf,
            label_flip: lf,
            multi_label_flip: mlf,
            normal,
        }
    }

    #[test]
    fn series_examples() {
        assert_eq!(
            build_exp_series(ExpSeries::Exp1, 1, 40).unwrap(),
            c(1, 1, 1, 3, 0, 34)
        );
        let worst = build_exp_series(ExpSeries::Exp2, 6, 40).unwrap();
        assert_eq!(worst, c(4, 6, 5, 0, 8, 17));
        assert_eq!(worst.malicious_fraction(), 0.475);
        assert_eq!(
            build_exp_series(ExpSeries::Exp1, 4, 40).unwrap(),
            c(4, 4, 4, 6, 0, 22)
        );
        assert!(matches!(
            build_exp_series(ExpSeries::Exp1, 0, 40),
            Err(HarnessError::BadIndex(0))
        ));
        assert!(matches!(
            build_exp_series(ExpSeries::Exp1, 7, 40),
            Err(HarnessError::BadIndex(7))
        ));
    }

    #[test]
    fn unreliable_share_at_the_top_of_the_series() {
        for i in 4..=6 {
            let r = build_exp_series(ExpSeries::Exp2, i, 40).unwrap();
            assert_eq!(r.unreliable as f64 / 40.0, 0.1);
        }
        let r3 = build_exp_series(ExpSeries::Exp1, 3, 40).unwrap();
        assert_eq!(r3.malicious() - r3.label_flip, 6);
        assert_eq!(r3.malicious_fraction(), 0.275);
    }

    #[test]
    fn roles_follow_id_order() {
        let lf = LabelMapping::new([(1, 7)]);
        let mlf = LabelMapping::new([(1, 7), (2, 7)]);
        let roles = c(1, 1, 1, 1, 1, 2).roles(0.01, &lf, &mlf);
        let kinds: Vec<ClientKind> = roles.iter().map(|r| r.kind()).collect();
        assert_eq!(
            kinds,
            vec![
                ClientKind::Unreliable,
                ClientKind::AdditiveNoise,
                ClientKind::SignFlip,
                ClientKind::LabelFlip,
                ClientKind::MultiLabelFlip,
                ClientKind::Normal,
                ClientKind::Normal
            ]
        );
    }
}

//! Agreement statistics between QA-based scores and human annotations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::QaError;

/// The seven yes/no judgements collected per generated question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFlags {
    pub context: bool,
    pub irrelevant: bool,
    pub contradiction: bool,
    pub peripheral: bool,
    pub span: bool,
    pub entire: bool,
    pub none: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Context,
    Irrelevant,
    Contradiction,
    Peripheral,
    Span,
    Entire,
    None,
}

impl Flag {
    pub const ALL: [Flag; 7] = [
        Flag::Context,
        Flag::Irrelevant,
        Flag::Contradiction,
        Flag::Peripheral,
        Flag::Span,
        Flag::Entire,
        Flag::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Flag::Context => "context",
            Flag::Irrelevant => "irrelevant",
            Flag::Contradiction => "contradiction",
            Flag::Peripheral => "peripheral",
            Flag::Span => "span",
            Flag::Entire => "entire",
            Flag::None => "none",
        }
    }

    pub fn parse(name: &str) -> Option<Flag> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl AnnotationFlags {
    pub fn get(&self, flag: Flag) -> bool {
        match flag {
            Flag::Context => self.context,
            Flag::Irrelevant => self.irrelevant,
            Flag::Contradiction => self.contradiction,
            Flag::Peripheral => self.peripheral,
            Flag::Span => self.span,
            Flag::Entire => self.entire,
            Flag::None => self.none,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub article_id: String,
    pub annotator_id: String,
    pub flags: AnnotationFlags,
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, QaError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(QaError::DegenerateInput(format!(
            "need two equal-length series of at least 2 values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(QaError::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Standardizes to mean 0 and (population) variance 1.
pub fn zscore(x: &[f64]) -> Result<Vec<f64>, QaError> {
    if x.is_empty() {
        return Err(QaError::DegenerateInput("empty series".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(QaError::DegenerateInput("zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

fn by_article(annotations: &[AnnotationRecord]) -> Result<BTreeMap<&str, Vec<&AnnotationRecord>>, QaError> {
    let mut groups: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        groups.entry(&a.article_id).or_default().push(a);
    }
    if let Some((article, g)) = groups.iter().find(|(_, g)| g.len() != 3) {
        return Err(QaError::InvalidAnnotationSet {
            article: article.to_string(),
            count: g.len(),
        });
    }
    Ok(groups)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unanimity {
    /// Percentage of unanimous articles where all annotators said yes.
    pub true_pct: f64,
    pub false_pct: f64,
    pub unanimous: usize,
    pub articles: usize,
}

/// For each flag, the split between all-yes and all-no among the articles
/// whose three annotators agree.
pub fn unanimity_ratios(annotations: &[AnnotationRecord], flags: &[Flag]) -> Result<BTreeMap<Flag, Unanimity>, QaError> {
    let groups = by_article(annotations)?;
    let mut out = BTreeMap::new();
    for &flag in flags {
        let (mut yes, mut no) = (0usize, 0usize);
        for g in groups.values() {
            let votes = g.iter().filter(|a| a.flags.get(flag)).count();
            if votes == g.len() {
                yes += 1;
            } else if votes == 0 {
                no += 1;
            }
        }
        let unanimous = yes + no;
        let pct = |k: usize| if unanimous == 0 { 0.0 } else { 100.0 * k as f64 / unanimous as f64 };
        out.insert(
            flag,
            Unanimity {
                true_pct: pct(yes),
                false_pct: pct(no),
                unanimous,
                articles: groups.len(),
            },
        );
    }
    Ok(out)
}

/// QA-based scores of one generated question, keyed by article id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    pub s_ans: f64,
    pub s_gra: f64,
}

/// Pearson correlation per flag for each score; `None` where a series has no variance.
pub type CorrelationTable = BTreeMap<String, BTreeMap<String, Option<f64>>>;

/// Correlates z-normalized scores with 0/1 flags, one pair per annotation.
pub fn correlation_table(items: &[ScoredItem], annotations: &[AnnotationRecord]) -> Result<CorrelationTable, QaError> {
    let s_ans = zscore(&items.iter().map(|i| i.s_ans).collect::<Vec<_>>())?;
    let s_gra = zscore(&items.iter().map(|i| i.s_gra).collect::<Vec<_>>())?;
    let index: BTreeMap<&str, usize> = items.iter().enumerate().map(|(k, i)| (i.id.as_str(), k)).collect();
    let mut rows = Vec::with_capacity(annotations.len());
    for a in annotations {
        let k = *index
            .get(a.article_id.as_str())
            .ok_or_else(|| QaError::InvalidInput(format!("no scores for article {}", a.article_id)))?;
        rows.push((k, &a.flags));
    }
    let mut table = CorrelationTable::new();
    for flag in Flag::ALL {
        let y: Vec<f64> = rows.iter().map(|(_, f)| f64::from(u8::from(f.get(flag)))).collect();
        let mut per = BTreeMap::new();
        for (name, z) in [("s_ans", &s_ans), ("s_gra", &s_gra)] {
            let x: Vec<f64> = rows.iter().map(|(k, _)| z[*k]).collect();
            per.insert(name.to_string(), pearson(&x, &y).ok());
        }
        table.insert(flag.name().to_string(), per);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(article: &str, annotator: &str, span: bool) -> AnnotationRecord {
        AnnotationRecord {
            article_id: article.into(),
            annotator_id: annotator.into(),
            flags: AnnotationFlags {
                context: true,
                irrelevant: false,
                contradiction: false,
                peripheral: false,
                span,
                entire: !span,
                none: false,
            },
        }
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&x, &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-9);
        assert!(matches!(pearson(&x, &[1.0; 3]), Err(QaError::DegenerateInput(_))));
    }

    #[test]
    fn zscore_moments() {
        let z = zscore(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
        assert!((z.iter().map(|v| v * v).sum::<f64>() / 8.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unanimity_examples() {
        let all = [rec("a", "1", true), rec("a", "2", true), rec("a", "3", true)];
        let r = unanimity_ratios(&all, &[Flag::Span]).unwrap();
        assert_eq!(r[&Flag::Span].true_pct, 100.0);
        let split = [rec("a", "1", true), rec("a", "2", true), rec("a", "3", false)];
        let r = unanimity_ratios(&split, &[Flag::Span, Flag::Context]).unwrap();
        assert_eq!(r[&Flag::Span].unanimous, 0);
        assert_eq!(r[&Flag::Context].true_pct, 100.0);
        assert!(matches!(
            unanimity_ratios(&all[..2], &[Flag::Span]),
            Err(QaError::InvalidAnnotationSet { count: 2, .. })
        ));
    }

    #[test]
    fn annotations_reject_unknown_fields() {
        let ok = r#"{"article_id":"a","annotator_id":"x","flags":{"context":true,"irrelevant":false,"contradiction":false,"peripheral":false,"span":true,"entire":false,"none":false}}"#;
        assert!(serde_json::from_str::<AnnotationRecord>(ok).is_ok());
        let extra = ok.replace("\"none\":false", "\"none\":false,\"other\":true");
        assert!(serde_json::from_str::<AnnotationRecord>(&extra).is_err());
        let missing = ok.replace(",\"none\":false", "");
        assert!(serde_json::from_str::<AnnotationRecord>(&missing).is_err());
    }

    #[test]
    fn correlation_identity() {
        let items: Vec<ScoredItem> = (0..4)
            .map(|i| ScoredItem {
                id: format!("a{i}"),
                s_ans: if i % 2 == 0 { 1.0 } else { -1.0 },
                s_gra: i as f64,
            })
            .collect();
        let ann: Vec<_> = (0..4)
            .flat_map(|i| (0..3).map(move |k| rec(&format!("a{i}"), &k.to_string(), i % 2 == 0)))
            .collect();
        let t = correlation_table(&items, &ann).unwrap();
        assert!((t["span"]["s_ans"].unwrap() - 1.0).abs() < 1e-12);
        assert!((t["entire"]["s_ans"].unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(t["context"]["s_ans"], None);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            xy in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..20),
            a in 0.1f64..5.0, b in -5.0f64..5.0,
        ) {
            let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
            let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                prop_assert!((pearson(&x2, &y).unwrap() - r).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}

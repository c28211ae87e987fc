//! Named landmarks for model and garment images.
//!
//! Coordinates are in pixels with the origin at the top-left corner, `x`
//! along columns and `y` increasing downward.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DgpError, Result};
use crate::io::read_text;

/// Model landmarks, indices 1 through 16.
pub const MODEL_POINT_NAMES: [&str; 16] = [
    "left neck",
    "left collarbone",
    "left shoulder",
    "left elbow",
    "left wrist",
    "left hip",
    "left thigh",
    "left knee",
    "right knee",
    "right thigh",
    "right hip",
    "right wrist",
    "right elbow",
    "right shoulder",
    "right collarbone",
    "right neck",
];

/// Sleeve landmarks carried by long-sleeve garments, indices 1 through 4.
pub const SLEEVE_POINT_NAMES: [&str; 4] = ["left elbow", "left wrist", "right elbow", "right wrist"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClothingCategory {
    #[serde(rename = "Sling")]
    Sling,
    #[serde(rename = "Undershirt")]
    Undershirt,
    #[serde(rename = "Short sleeve top")]
    ShortSleeveTop,
    #[serde(rename = "Long sleeve top")]
    LongSleeveTop,
    #[serde(rename = "Long sleeve outwear")]
    LongSleeveOutwear,
    #[serde(rename = "Windbreaker")]
    Windbreaker,
}

impl ClothingCategory {
    pub const ALL: [ClothingCategory; 6] = [
        ClothingCategory::Sling,
        ClothingCategory::Undershirt,
        ClothingCategory::ShortSleeveTop,
        ClothingCategory::LongSleeveTop,
        ClothingCategory::LongSleeveOutwear,
        ClothingCategory::Windbreaker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClothingCategory::Sling => "Sling",
            ClothingCategory::Undershirt => "Undershirt",
            ClothingCategory::ShortSleeveTop => "Short sleeve top",
            ClothingCategory::LongSleeveTop => "Long sleeve top",
            ClothingCategory::LongSleeveOutwear => "Long sleeve outwear",
            ClothingCategory::Windbreaker => "Windbreaker",
        }
    }

    /// Case-insensitive lookup that also accepts `-`/`_` for spaces.
    pub fn from_name(name: &str) -> Result<Self> {
        let norm = |s: &str| s.to_ascii_lowercase().replace(['-', '_'], " ");
        let wanted = norm(name.trim());
        Self::ALL
            .into_iter()
            .find(|c| norm(c.name()) == wanted)
            .ok_or_else(|| DgpError::Schema(format!("unknown clothing category {name:?}")))
    }

    /// Garment landmarks, indices 1 through 4.
    pub fn point_names(self) -> [&'static str; 4] {
        let top = match self {
            ClothingCategory::Sling | ClothingCategory::Undershirt => ("left collarbone", "right collarbone"),
            ClothingCategory::ShortSleeveTop => ("left shoulder", "right shoulder"),
            ClothingCategory::LongSleeveTop | ClothingCategory::LongSleeveOutwear | ClothingCategory::Windbreaker => {
                ("left neck", "right neck")
            }
        };
        [top.0, "left hip", "right hip", top.1]
    }

    pub fn has_long_sleeves(self) -> bool {
        matches!(
            self,
            ClothingCategory::LongSleeveTop | ClothingCategory::LongSleeveOutwear | ClothingCategory::Windbreaker
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyPointKind {
    Model,
    Clothing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPoint {
    pub index: usize,
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyPointSet {
    kind: KeyPointKind,
    category: Option<ClothingCategory>,
    /// Slot `i` holds the point with index `i + 1`.
    points: Vec<KeyPoint>,
    sleeves: Vec<KeyPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KeyPointDoc {
    kind: KeyPointKind,
    #[serde(default)]
    category: Option<String>,
    points: Vec<KeyPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sleeve_points: Option<Vec<KeyPoint>>,
}

fn fill_schema(names: &[&str], given: &[KeyPoint], what: &str) -> Result<Vec<KeyPoint>> {
    let mut slots: Vec<Option<KeyPoint>> = vec![None; names.len()];
    for p in given {
        if p.index == 0 || p.index > names.len() {
            return Err(DgpError::Schema(format!(
                "{what} index {} outside 1..={}",
                p.index,
                names.len()
            )));
        }
        let expected = names[p.index - 1];
        if !p.name.eq_ignore_ascii_case(expected) {
            return Err(DgpError::Schema(format!(
                "{what} index {} must be named {expected:?}, got {:?}",
                p.index, p.name
            )));
        }
        if p.present && !(p.x.is_finite() && p.y.is_finite()) {
            return Err(DgpError::Schema(format!(
                "{what} index {} has non-finite coordinates",
                p.index
            )));
        }
        let slot = &mut slots[p.index - 1];
        if slot.is_some() {
            return Err(DgpError::Schema(format!("duplicate {what} index {}", p.index)));
        }
        *slot = Some(KeyPoint {
            name: expected.to_string(),
            ..p.clone()
        });
    }
    Ok(slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.unwrap_or_else(|| KeyPoint {
                index: i + 1,
                name: names[i].to_string(),
                x: 0.0,
                y: 0.0,
                present: false,
            })
        })
        .collect())
}

impl KeyPointSet {
    pub fn model(points: &[KeyPoint]) -> Result<Self> {
        Ok(Self {
            kind: KeyPointKind::Model,
            category: None,
            points: fill_schema(&MODEL_POINT_NAMES, points, "model point")?,
            sleeves: Vec::new(),
        })
    }

    pub fn clothing(category: ClothingCategory, points: &[KeyPoint], sleeves: &[KeyPoint]) -> Result<Self> {
        if !sleeves.is_empty() && !category.has_long_sleeves() {
            return Err(DgpError::Schema(format!(
                "category {:?} has no sleeve points",
                category.name()
            )));
        }
        let sleeves = if category.has_long_sleeves() {
            fill_schema(&SLEEVE_POINT_NAMES, sleeves, "sleeve point")?
        } else {
            Vec::new()
        };
        Ok(Self {
            kind: KeyPointKind::Clothing,
            category: Some(category),
            points: fill_schema(&category.point_names(), points, "clothing point")?,
            sleeves,
        })
    }

    /// Builds a model set from 16 `(x, y)` positions, all present.
    pub fn model_from_positions(pos: &[(f64, f64); 16]) -> Self {
        let pts: Vec<KeyPoint> = pos
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| KeyPoint {
                index: i + 1,
                name: MODEL_POINT_NAMES[i].to_string(),
                x,
                y,
                present: true,
            })
            .collect();
        Self::model(&pts).expect("complete model schema")
    }

    pub fn clothing_from_positions(
        category: ClothingCategory,
        pos: &[(f64, f64); 4],
        sleeves: Option<&[(f64, f64); 4]>,
    ) -> Self {
        let names = category.point_names();
        let mk = |names: &[&str], pos: &[(f64, f64); 4]| -> Vec<KeyPoint> {
            pos.iter()
                .enumerate()
                .map(|(i, &(x, y))| KeyPoint {
                    index: i + 1,
                    name: names[i].to_string(),
                    x,
                    y,
                    present: true,
                })
                .collect()
        };
        let sl = sleeves.map(|s| mk(&SLEEVE_POINT_NAMES, s)).unwrap_or_default();
        Self::clothing(category, &mk(&names, pos), &sl).expect("complete clothing schema")
    }

    pub fn kind(&self) -> KeyPointKind {
        self.kind
    }

    pub fn category(&self) -> Option<ClothingCategory> {
        self.category
    }

    pub fn points(&self) -> &[KeyPoint] {
        &self.points
    }

    pub fn sleeves(&self) -> &[KeyPoint] {
        &self.sleeves
    }

    pub fn present_count(&self) -> usize {
        self.points.iter().filter(|p| p.present).count()
    }

    /// Position of the present point with the given 1-based index.
    pub fn position(&self, index: usize) -> Result<(f64, f64)> {
        lookup(&self.points, index)
    }

    pub fn sleeve_position(&self, index: usize) -> Result<(f64, f64)> {
        lookup(&self.sleeves, index).map_err(|e| match e {
            DgpError::MissingKeypoint { index, name } => DgpError::MissingKeypoint {
                index,
                name: format!("sleeve {name}"),
            },
            e => e,
        })
    }

    /// Checks that every present point lies inside a `rows`x`cols` image.
    pub fn check_bounds(&self, rows: usize, cols: usize) -> Result<()> {
        for p in self.points.iter().chain(&self.sleeves).filter(|p| p.present) {
            if !(p.x >= 0.0 && p.x < cols as f64 && p.y >= 0.0 && p.y < rows as f64) {
                return Err(DgpError::Schema(format!(
                    "point {} ({}) at ({}, {}) lies outside the {rows}x{cols} image",
                    p.index, p.name, p.x, p.y
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: KeyPointDoc = serde_json::from_str(text)?;
        match doc.kind {
            KeyPointKind::Model => {
                if doc.category.is_some() {
                    return Err(DgpError::Schema("model keypoints carry no category".into()));
                }
                if doc.sleeve_points.is_some() {
                    return Err(DgpError::Schema("model keypoints carry no sleeve points".into()));
                }
                Self::model(&doc.points)
            }
            KeyPointKind::Clothing => {
                let cat = doc
                    .category
                    .as_deref()
                    .ok_or_else(|| DgpError::Schema("clothing keypoints need a category".into()))?;
                let cat = ClothingCategory::from_name(cat)?;
                Self::clothing(cat, &doc.points, doc.sleeve_points.as_deref().unwrap_or(&[]))
            }
        }
    }

    pub fn to_json(&self) -> String {
        let doc = KeyPointDoc {
            kind: self.kind,
            category: self.category.map(|c| c.name().to_string()),
            points: self.points.clone(),
            sleeve_points: (!self.sleeves.is_empty()).then(|| self.sleeves.clone()),
        };
        serde_json::to_string_pretty(&doc).expect("keypoints serialize")
    }
}

fn lookup(points: &[KeyPoint], index: usize) -> Result<(f64, f64)> {
    match points.get(index.wrapping_sub(1)) {
        Some(p) if p.present => Ok((p.x, p.y)),
        Some(p) => Err(DgpError::MissingKeypoint {
            index,
            name: p.name.clone(),
        }),
        None => Err(DgpError::MissingKeypoint {
            index,
            name: "<out of schema>".into(),
        }),
    }
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<KeyPointSet> {
    KeyPointSet::from_json(&read_text(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_json() -> String {
        let pts: Vec<String> = MODEL_POINT_NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| {
                format!(
                    r#"{{"index": {}, "name": "{n}", "x": {}, "y": {}, "present": true}}"#,
                    i + 1,
                    i as f64,
                    2.0 * i as f64
                )
            })
            .collect();
        format!(
            r#"{{"kind": "model", "category": null, "points": [{}]}}"#,
            pts.join(",")
        )
    }

    #[test]
    fn model_schema_has_sixteen_points() {
        let set = KeyPointSet::from_json(&model_json()).unwrap();
        assert_eq!(set.kind(), KeyPointKind::Model);
        assert_eq!(set.points().len(), 16);
        assert_eq!(set.present_count(), 16);
        assert_eq!(set.points()[3].name, "left elbow");
        assert_eq!(set.points()[15].name, "right neck");
        assert_eq!(set.position(6).unwrap(), (5.0, 10.0));
    }

    #[test]
    fn sling_points() {
        let json = r#"{"kind": "clothing", "category": "Sling", "points": [
            {"index": 1, "name": "left collarbone", "x": 1, "y": 1, "present": true},
            {"index": 2, "name": "left hip", "x": 1, "y": 9, "present": true},
            {"index": 3, "name": "right hip", "x": 9, "y": 9, "present": true},
            {"index": 4, "name": "right collarbone", "x": 9, "y": 1, "present": true}]}"#;
        let set = KeyPointSet::from_json(json).unwrap();
        assert_eq!(set.kind(), KeyPointKind::Clothing);
        assert_eq!(set.category(), Some(ClothingCategory::Sling));
        assert_eq!(set.present_count(), 4);
    }

    #[test]
    fn out_of_schema_index_rejected() {
        let json = r#"{"kind": "clothing", "category": "Sling", "points": [
            {"index": 5, "name": "left elbow", "x": 1, "y": 1, "present": true}]}"#;
        assert!(matches!(KeyPointSet::from_json(json), Err(DgpError::Schema(_))));
    }

    #[test]
    fn duplicate_and_unknown_category_rejected() {
        let dup = r#"{"kind": "clothing", "category": "Sling", "points": [
            {"index": 1, "name": "left collarbone", "x": 1, "y": 1, "present": true},
            {"index": 1, "name": "left collarbone", "x": 2, "y": 1, "present": true}]}"#;
        assert!(KeyPointSet::from_json(dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let unk = r#"{"kind": "clothing", "category": "Poncho", "points": []}"#;
        assert!(KeyPointSet::from_json(unk).unwrap_err().to_string().contains("unknown"));
    }

    #[test]
    fn wrong_name_rejected() {
        let json = r#"{"kind": "clothing", "category": "Short sleeve top", "points": [
            {"index": 1, "name": "left neck", "x": 1, "y": 1, "present": true}]}"#;
        assert!(KeyPointSet::from_json(json).is_err());
    }

    #[test]
    fn missing_points_are_absent() {
        let json = r#"{"kind": "model", "points": [
            {"index": 2, "name": "left collarbone", "x": 1, "y": 1, "present": true}]}"#;
        let set = KeyPointSet::from_json(json).unwrap();
        assert_eq!(set.present_count(), 1);
        let err = set.position(6).unwrap_err();
        assert!(matches!(err, DgpError::MissingKeypoint { index: 6, .. }));
    }

    #[test]
    fn sleeves_only_for_long_sleeve_categories() {
        let s = [(0.0, 0.0); 4];
        let set = KeyPointSet::clothing_from_positions(ClothingCategory::Windbreaker, &s, Some(&s));
        assert_eq!(set.sleeves().len(), 4);
        let back = KeyPointSet::from_json(&set.to_json()).unwrap();
        assert_eq!(back, set);
        let sleeve = [KeyPoint {
            index: 1,
            name: "left elbow".into(),
            x: 0.0,
            y: 0.0,
            present: true,
        }];
        assert!(KeyPointSet::clothing(ClothingCategory::Sling, &[], &sleeve).is_err());
    }

    #[test]
    fn bounds_check() {
        let set = KeyPointSet::from_json(&model_json()).unwrap();
        assert!(set.check_bounds(40, 20).is_ok());
        assert!(set.check_bounds(10, 10).is_err());
    }

    #[test]
    fn category_lookup_is_lenient() {
        assert_eq!(
            ClothingCategory::from_name("long-sleeve_top").unwrap(),
            ClothingCategory::LongSleeveTop
        );
    }
}

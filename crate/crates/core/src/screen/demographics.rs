//! Socio-demographic encoding: sex, pregnancy, age group and age-corrected BMI
//! packed into a fixed 10-slot vector.

use super::ScreenError;
use serde::{Deserialize, Serialize};

/// Length of the encoded demographic vector.
pub const DEMO_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    #[default]
    Missing,
}

impl Sex {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "nan" => Some(Sex::Missing),
            "f" | "female" => Some(Sex::Female),
            "m" | "male" => Some(Sex::Male),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Sex::Female => "F",
            Sex::Male => "M",
            Sex::Missing => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Neonate,
    Infant,
    Child,
    Adolescent,
    #[default]
    Missing,
}

impl AgeGroup {
    pub const KNOWN: [AgeGroup; 4] = [AgeGroup::Neonate, AgeGroup::Infant, AgeGroup::Child, AgeGroup::Adolescent];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "nan" | "none" => Some(AgeGroup::Missing),
            "neonate" => Some(AgeGroup::Neonate),
            "infant" => Some(AgeGroup::Infant),
            "child" => Some(AgeGroup::Child),
            "adolescent" => Some(AgeGroup::Adolescent),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            AgeGroup::Neonate => "neonate",
            AgeGroup::Infant => "infant",
            AgeGroup::Child => "child",
            AgeGroup::Adolescent => "adolescent",
            AgeGroup::Missing => "",
        }
    }

    fn slot(self) -> Option<usize> {
        AgeGroup::KNOWN.iter().position(|&g| g == self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DemographicRecord {
    pub sex: Sex,
    pub age_group: AgeGroup,
    pub height_cm: Option<f64>,
    pub weight_kg: Option<f64>,
    pub pregnant: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcBmi {
    Underweight,
    Normal,
    Overweight,
    Obese,
    Missing,
}

impl AcBmi {
    fn slot(self) -> Option<usize> {
        match self {
            AcBmi::Underweight => Some(0),
            AcBmi::Normal => Some(1),
            AcBmi::Overweight => Some(2),
            AcBmi::Obese => Some(3),
            AcBmi::Missing => None,
        }
    }
}

/// Per-age-group BMI thresholds `(t1, t2, t3)` separating the four acBMI classes.
///
/// The shipped values are placeholders in the plausible pediatric range; replace them
/// with the reference growth tables appropriate for the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcBmiCutoffs {
    pub neonate: [f64; 3],
    pub infant: [f64; 3],
    pub child: [f64; 3],
    pub adolescent: [f64; 3],
}

impl Default for AcBmiCutoffs {
    fn default() -> Self {
        Self {
            neonate: [11.0, 14.0, 16.0],
            infant: [14.0, 18.0, 20.0],
            child: [14.0, 18.0, 22.0],
            adolescent: [17.0, 24.0, 29.0],
        }
    }
}

impl AcBmiCutoffs {
    pub fn validate(&self) -> Result<(), ScreenError> {
        for (name, t) in [
            ("neonate", self.neonate),
            ("infant", self.infant),
            ("child", self.child),
            ("adolescent", self.adolescent),
        ] {
            let ok = t.iter().all(|v| v.is_finite()) && t[0] < t[1] && t[1] < t[2];
            if !ok {
                return Err(ScreenError::BadCutoffTable(format!("{name}: {t:?}")));
            }
        }
        Ok(())
    }

    fn for_group(&self, g: AgeGroup) -> Option<[f64; 3]> {
        match g {
            AgeGroup::Neonate => Some(self.neonate),
            AgeGroup::Infant => Some(self.infant),
            AgeGroup::Child => Some(self.child),
            AgeGroup::Adolescent => Some(self.adolescent),
            AgeGroup::Missing => None,
        }
    }
}

pub fn bmi(weight_kg: f64, height_cm: f64) -> f64 {
    let m = height_cm / 100.0;
    weight_kg / (m * m)
}

/// Age-corrected BMI class. A BMI equal to a threshold falls into the upper class.
pub fn acbmi_category(rec: &DemographicRecord, cutoffs: &AcBmiCutoffs) -> Result<AcBmi, ScreenError> {
    cutoffs.validate()?;
    let (Some(w), Some(h), Some(t)) = (rec.weight_kg, rec.height_cm, cutoffs.for_group(rec.age_group)) else {
        return Ok(AcBmi::Missing);
    };
    let b = bmi(w, h);
    if !b.is_finite() {
        return Ok(AcBmi::Missing);
    }
    Ok(if b < t[0] {
        AcBmi::Underweight
    } else if b < t[1] {
        AcBmi::Normal
    } else if b < t[2] {
        AcBmi::Overweight
    } else {
        AcBmi::Obese
    })
}

/// Layout: `[sex, pregnant, age one-hot x4, acBMI one-hot x4]`; missing blocks are zero,
/// missing sex is 0.5.
pub fn encode_demographics(rec: &DemographicRecord, cutoffs: &AcBmiCutoffs) -> [f64; DEMO_DIM] {
    let mut v = [0.0; DEMO_DIM];
    v[0] = match rec.sex {
        Sex::Female => 0.0,
        Sex::Male => 1.0,
        Sex::Missing => 0.5,
    };
    v[1] = if rec.pregnant == Some(true) { 1.0 } else { 0.0 };
    if let Some(i) = rec.age_group.slot() {
        v[2 + i] = 1.0;
    }
    let cat = acbmi_category(rec, cutoffs).unwrap_or(AcBmi::Missing);
    if let Some(i) = cat.slot() {
        v[6 + i] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(sex: Sex, age: AgeGroup, h: Option<f64>, w: Option<f64>, p: Option<bool>) -> DemographicRecord {
        DemographicRecord {
            sex,
            age_group: age,
            height_cm: h,
            weight_kg: w,
            pregnant: p,
        }
    }

    #[test]
    fn child_bmi_example() {
        let r = rec(Sex::Male, AgeGroup::Child, Some(130.0), Some(30.0), Some(false));
        assert!((bmi(30.0, 130.0) - 17.751479289940828).abs() < 1e-12);
        assert_eq!(acbmi_category(&r, &AcBmiCutoffs::default()).unwrap(), AcBmi::Normal);
        assert_eq!(
            encode_demographics(&r, &AcBmiCutoffs::default()),
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn missing_inputs() {
        let r = rec(Sex::Female, AgeGroup::Child, None, Some(30.0), None);
        assert_eq!(acbmi_category(&r, &AcBmiCutoffs::default()).unwrap(), AcBmi::Missing);
        let all_missing = DemographicRecord::default();
        assert_eq!(
            encode_demographics(&all_missing, &AcBmiCutoffs::default()),
            [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        // known BMI but unknown age group cannot be age-corrected
        let r = rec(Sex::Male, AgeGroup::Missing, Some(130.0), Some(30.0), None);
        assert_eq!(acbmi_category(&r, &AcBmiCutoffs::default()).unwrap(), AcBmi::Missing);
    }

    #[test]
    fn threshold_goes_to_upper_class() {
        let cut = AcBmiCutoffs::default();
        // height 100 cm makes BMI equal to the weight
        let at = |w: f64| acbmi_category(&rec(Sex::Male, AgeGroup::Child, Some(100.0), Some(w), None), &cut).unwrap();
        assert_eq!(at(14.0), AcBmi::Normal);
        assert_eq!(at(18.0), AcBmi::Overweight);
        assert_eq!(at(22.0), AcBmi::Obese);
        assert_eq!(at(13.9), AcBmi::Underweight);
    }

    #[test]
    fn pregnant_adolescent_female() {
        let r = rec(Sex::Female, AgeGroup::Adolescent, None, None, Some(true));
        let v = encode_demographics(&r, &AcBmiCutoffs::default());
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 1.0);
        assert_eq!(&v[2..6], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&v[6..], &[0.0; 4]);
    }

    #[test]
    fn non_monotone_table_rejected() {
        let mut cut = AcBmiCutoffs::default();
        cut.infant = [18.0, 14.0, 20.0];
        let r = rec(Sex::Male, AgeGroup::Child, Some(130.0), Some(30.0), None);
        assert!(matches!(acbmi_category(&r, &cut), Err(ScreenError::BadCutoffTable(_))));
    }

    proptest::proptest! {
        #[test]
        fn encoding_is_total_and_bounded(
            sex in 0u8..3, age in 0u8..5, h in proptest::option::of(1.0f64..250.0),
            w in proptest::option::of(0.5f64..200.0), p in proptest::option::of(proptest::bool::ANY),
        ) {
            let sex = [Sex::Female, Sex::Male, Sex::Missing][sex as usize];
            let age = [AgeGroup::Neonate, AgeGroup::Infant, AgeGroup::Child, AgeGroup::Adolescent, AgeGroup::Missing][age as usize];
            let v = encode_demographics(&rec(sex, age, h, w, p), &AcBmiCutoffs::default());
            proptest::prop_assert_eq!(v.len(), DEMO_DIM);
            proptest::prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            proptest::prop_assert!(v[2..6].iter().sum::<f64>() <= 1.0);
            proptest::prop_assert!(v[6..].iter().sum::<f64>() <= 1.0);
        }
    }
}

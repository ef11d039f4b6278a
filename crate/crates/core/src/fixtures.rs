//! Default feature lists for the two bundled benchmark datasets.

pub const TITANIC_TARGET: &str = "Survived";
pub const TITANIC_FEATURES: [&str; 7] = ["Pclass", "Sex", "Age", "SibSp", "Parch", "Fare", "Embarked"];

pub const DIABETES_TARGET: &str = "Outcome";
pub const DIABETES_FEATURES: [&str; 8] = [
    "Pregnancies",
    "Glucose",
    "BloodPressure",
    "SkinThickness",
    "Insulin",
    "BMI",
    "DiabetesPedigreeFunction",
    "Age",
];

/// The bundled feature list whose target and columns match `header`, if any.
pub fn default_features(header: &[String], target: &str) -> Option<Vec<String>> {
    let candidates: [(&str, &[&str]); 2] = [
        (TITANIC_TARGET, &TITANIC_FEATURES),
        (DIABETES_TARGET, &DIABETES_FEATURES),
    ];
    candidates
        .into_iter()
        .find(|(t, feats)| *t == target && feats.iter().all(|f| header.iter().any(|h| h == f)))
        .map(|(_, feats)| feats.iter().map(|s| s.to_string()).collect())
}

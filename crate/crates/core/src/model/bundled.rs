use super::config::{parse_config, ModelConfig};
use crate::error::{Error, Result};

/// Every bundled variant as `(name, document)`.
pub const BUNDLED: [(&str, &str); 10] = [
    ("yolov5s", include_str!("../../../../configs/yolov5s.cfg")),
    ("yolov5m", include_str!("../../../../configs/yolov5m.cfg")),
    ("yolov5s-tiny", include_str!("../../../../configs/yolov5s-tiny.cfg")),
    ("yolov5s-g1", include_str!("../../../../configs/yolov5s-g1.cfg")),
    ("yolov5s-g2", include_str!("../../../../configs/yolov5s-g2.cfg")),
    ("yolov5s-cc1", include_str!("../../../../configs/yolov5s-cc1.cfg")),
    ("yolov5s-cc2", include_str!("../../../../configs/yolov5s-cc2.cfg")),
    ("yolov5s-gam", include_str!("../../../../configs/yolov5s-gam.cfg")),
    ("yolo-tla-s", include_str!("../../../../configs/yolo-tla-s.cfg")),
    ("yolo-tla-m", include_str!("../../../../configs/yolo-tla-m.cfg")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Parse a bundled config by name (a trailing `.cfg` is accepted).
pub fn bundled_config(name: &str) -> Result<ModelConfig> {
    let key = name.strip_suffix(".cfg").unwrap_or(name);
    let (_, doc) = BUNDLED
        .iter()
        .find(|(n, _)| *n == key)
        .ok_or_else(|| Error::config(format!("no bundled config named `{name}`")))?;
    parse_config(doc)
}

/// Read a config file, falling back to a bundled variant when `spec` is not
/// an existing path (so `configs/yolov5s.cfg` and `yolov5s` both work).
pub fn load_config(spec: &str) -> Result<ModelConfig> {
    let path = std::path::Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        return parse_config(&text);
    }
    let stem = path.file_name().and_then(|s| s.to_str()).unwrap_or(spec);
    bundled_config(stem).map_err(|_| Error::config(format!("`{spec}` is neither a readable file nor a bundled config")))
}

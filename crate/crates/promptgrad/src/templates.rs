//! Loading prompt templates from a directory.

use std::fs;
use std::path::Path;

use promptgrad_core::gateway::{Template, TemplateSet};

use crate::error::{Error, Result};

/// Start from the built-in templates and replace or add one template per
/// `*.txt` file in `dir`, keyed by file stem.
pub fn load_templates_dir(dir: &Path) -> Result<TemplateSet> {
    let mut set = TemplateSet::builtin();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    for path in paths {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("{}: bad template file name", path.display())))?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let template = Template::new(id, &text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        set.insert(template);
    }
    Ok(set)
}

/// Write the built-in templates to `dir`, one file each.
pub fn export_builtin(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, text) in TemplateSet::builtin_sources() {
        let path = dir.join(format!("{id}.txt"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn override_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        export_builtin(dir.path()).unwrap();
        let loaded = load_templates_dir(dir.path()).unwrap();
        assert_eq!(
            loaded.ids().collect::<Vec<_>>(),
            TemplateSet::builtin().ids().collect::<Vec<_>>()
        );
        fs::write(dir.path().join("paraphrase.txt"), "Say again: {prompt}").unwrap();
        let set = load_templates_dir(dir.path()).unwrap();
        let mut b = BTreeMap::new();
        b.insert("prompt".to_string(), "hi".to_string());
        assert_eq!(set.get("paraphrase").unwrap().render(&b).unwrap(), "Say again: hi");
    }

    #[test]
    fn bad_template_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("fuse.txt"), "unclosed {brace").unwrap();
        assert!(matches!(load_templates_dir(dir.path()), Err(Error::Config(_))));
    }
}

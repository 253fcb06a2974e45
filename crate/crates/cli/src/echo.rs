use std::fmt::Display;

/// Fully resolved settings of one run, printed as `# key = value` lines
/// before any work is done.
pub struct Echo {
    command: &'static str,
    entries: Vec<(String, String)>,
}

impl Echo {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            entries: Vec::new(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Adds every `key = value` line of `text`.
    pub fn put_kv(&mut self, text: &str) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.put(k.trim(), v.trim());
            }
        }
    }

    pub fn print(&self) {
        println!("# nsf {}", self.command);
        for (k, v) in &self.entries {
            println!("# {k} = {v}");
        }
    }
}

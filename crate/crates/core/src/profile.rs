use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Scale of an experiment: the full three-dataset setting, or the desk-scale
/// synthetic setting used for acceptance runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Profile {
    Paper,
    Mini,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Mini => "mini",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Profile::Paper => 3,
            Profile::Mini => 1,
        }
    }

    /// Side of the stored (uncropped) task images.
    pub fn source_size(self) -> usize {
        match self {
            Profile::Paper => 32,
            Profile::Mini => 20,
        }
    }

    /// Side of the classifier input after cropping.
    pub fn crop_size(self) -> usize {
        match self {
            Profile::Paper => 24,
            Profile::Mini => 16,
        }
    }

    /// Side of the generator output.
    pub fn gan_size(self) -> usize {
        match self {
            Profile::Paper => 32,
            Profile::Mini => 16,
        }
    }

    pub fn classifier_input(self) -> Vec<usize> {
        vec![self.channels(), self.crop_size(), self.crop_size()]
    }

    pub fn gan_image(self) -> Vec<usize> {
        vec![self.channels(), self.gan_size(), self.gan_size()]
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "paper" => Ok(Profile::Paper),
            "mini" => Ok(Profile::Mini),
            other => Err(Error::Config(format!("unknown profile '{other}' (expected paper or mini)"))),
        }
    }
}

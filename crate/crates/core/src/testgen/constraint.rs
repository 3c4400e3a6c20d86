use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image-domain restriction applied to each ascent gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Constraint {
    #[default]
    None,
    /// Uniform brightness change: every element becomes the gradient mean.
    Lightening,
    /// Only a `width × height` rectangle may change.
    Occlusion { width: usize, height: usize },
    /// Like occlusion, but pixels inside the rectangle may only darken.
    Blackout { width: usize, height: usize },
}

/// Top-left corner and extent of a rectangle, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    fn contains(&self, r: usize, c: usize) -> bool {
        (self.top..self.top + self.height).contains(&r) && (self.left..self.left + self.width).contains(&c)
    }
}

/// A constraint bound to one seed: image geometry plus rectangle position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacedConstraint {
    constraint: Constraint,
    rows: usize,
    cols: usize,
    rect: Option<Rect>,
}

impl Constraint {
    fn extent(&self) -> Option<(usize, usize)> {
        match *self {
            Constraint::Occlusion { width, height } | Constraint::Blackout { width, height } => {
                Some((width, height))
            }
            _ => None,
        }
    }

    /// Checks the rectangle fits a `rows × cols` image.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if let Some((w, h)) = self.extent() {
            if w == 0 || h == 0 {
                return Err(Error::contract("constraint rectangle must be non-empty"));
            }
            if w > cols || h > rows {
                return Err(Error::contract(format!(
                    "{w}x{h} rectangle does not fit a {cols}x{rows} image"
                )));
            }
        }
        Ok(())
    }

    /// Fixes the rectangle (if any) uniformly at random within the image.
    pub fn place<R: Rng + ?Sized>(&self, rows: usize, cols: usize, rng: &mut R) -> Result<PlacedConstraint> {
        self.validate(rows, cols)?;
        let rect = self.extent().map(|(width, height)| Rect {
            top: rng.random_range(0..=rows - height),
            left: rng.random_range(0..=cols - width),
            width,
            height,
        });
        Ok(PlacedConstraint {
            constraint: *self,
            rows,
            cols,
            rect,
        })
    }

    pub fn at(&self, rows: usize, cols: usize, rect: Option<Rect>) -> Result<PlacedConstraint> {
        self.validate(rows, cols)?;
        if self.extent().is_some() != rect.is_some() {
            return Err(Error::contract("rectangle given for a constraint without one, or missing"));
        }
        if let Some(r) = rect {
            if r.top + r.height > rows || r.left + r.width > cols {
                return Err(Error::contract("rectangle lies outside the image"));
            }
        }
        Ok(PlacedConstraint {
            constraint: *self,
            rows,
            cols,
            rect,
        })
    }
}

impl PlacedConstraint {
    pub fn rect(&self) -> Option<Rect> {
        self.rect
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Rewrites `gradient` in place.
    pub fn apply(&self, gradient: &mut [f64]) -> Result<()> {
        if gradient.len() != self.rows * self.cols {
            return Err(Error::Shape {
                op: "constrain",
                left: vec![self.rows, self.cols],
                right: vec![gradient.len()],
            });
        }
        match self.constraint {
            Constraint::None => {}
            Constraint::Lightening => {
                let mean = gradient.iter().sum::<f64>() / gradient.len() as f64;
                gradient.fill(mean);
            }
            Constraint::Occlusion { .. } | Constraint::Blackout { .. } => {
                let rect = self.rect.expect("placed with a rectangle");
                let darken_only = matches!(self.constraint, Constraint::Blackout { .. });
                for (i, g) in gradient.iter_mut().enumerate() {
                    if !rect.contains(i / self.cols, i % self.cols) {
                        *g = 0.0;
                    } else if darken_only {
                        *g = g.min(0.0);
                    }
                }
            }
        }
        Ok(())
    }
}

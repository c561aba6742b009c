//! Brute-force enumeration over a world's full joint table. Shares no code
//! with `grasp_afford::sim` beyond reading the world's matrices.

#![allow(dead_code)]

use grasp_afford::sim::World;

pub struct Joint {
    pub g: usize,
    pub i: usize,
    pub o: usize,
    /// `joint[g][i][o]`
    pub mass: Vec<Vec<Vec<f64>>>,
}

pub fn joint_table(w: &World) -> Joint {
    let (g, i, o) = (
        w.prior.probs().len(),
        w.image_given_grasp[0].len(),
        w.object_given_grasp[0].len(),
    );
    let mut mass = vec![vec![vec![0.0; o]; i]; g];
    for (gg, plane) in mass.iter_mut().enumerate() {
        for (ii, row) in plane.iter_mut().enumerate() {
            for (oo, m) in row.iter_mut().enumerate() {
                *m = w.prior.probs()[gg]
                    * w.image_given_grasp[gg][ii]
                    * w.object_given_grasp[gg][oo];
            }
        }
    }
    Joint { g, i, o, mass }
}

fn first_max(v: &[f64]) -> usize {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().position(|&x| x == m).unwrap()
}

impl Joint {
    pub fn pair_mass(&self, i: usize, o: usize) -> f64 {
        (0..self.g).map(|g| self.mass[g][i][o]).sum()
    }

    /// `p(g | i, o) = p(g, i, o) / p(i, o)`
    pub fn posterior(&self, i: usize, o: usize) -> Option<Vec<f64>> {
        let z = self.pair_mass(i, o);
        (z > 0.0).then(|| (0..self.g).map(|g| self.mass[g][i][o] / z).collect())
    }

    /// `p(g | i)` by marginalizing the object symbol out of the joint table.
    pub fn image_posterior(&self, i: usize) -> Option<Vec<f64>> {
        let per_g: Vec<f64> = (0..self.g)
            .map(|g| (0..self.o).map(|o| self.mass[g][i][o]).sum())
            .collect();
        let z: f64 = per_g.iter().sum();
        (z > 0.0).then(|| per_g.iter().map(|x| x / z).collect())
    }

    /// `p(g | o)` by marginalizing the image symbol out of the joint table.
    pub fn object_posterior(&self, o: usize) -> Option<Vec<f64>> {
        let per_g: Vec<f64> = (0..self.g)
            .map(|g| (0..self.i).map(|i| self.mass[g][i][o]).sum())
            .collect();
        let z: f64 = per_g.iter().sum();
        (z > 0.0).then(|| per_g.iter().map(|x| x / z).collect())
    }

    /// Expected accuracy of deciding with `decide(i, o)`; `None` decisions score nothing.
    fn accuracy_of(&self, decide: impl Fn(usize, usize) -> Option<usize>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.i {
            for o in 0..self.o {
                if self.pair_mass(i, o) <= 0.0 {
                    continue;
                }
                if let Some(g) = decide(i, o) {
                    acc += self.mass[g][i][o];
                }
            }
        }
        acc
    }

    pub fn cnn_accuracy(&self) -> f64 {
        self.accuracy_of(|i, _| self.image_posterior(i).map(|p| first_max(&p)))
    }

    pub fn affordance_accuracy(&self) -> f64 {
        self.accuracy_of(|_, o| self.object_posterior(o).map(|p| first_max(&p)))
    }

    /// Accuracy of the Bayes decision on the exact posterior.
    pub fn bayes_accuracy(&self) -> f64 {
        self.accuracy_of(|i, o| self.posterior(i, o).map(|p| first_max(&p)))
    }
}

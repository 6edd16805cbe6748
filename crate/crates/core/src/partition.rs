//! Voronoi partitions of the grid for multi-robot coordination.
//!
//! Each cell is assigned to the robot site nearest to its center; distance
//! ties go to the lower robot id so the assignment is a true partition. A
//! fixed partition is computed once from the starting positions, while a
//! dynamic partition is recomputed from the current positions every time a
//! robot requests its region.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridSpec, Point};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("cannot build a partition from zero sites")]
    NoSites,
    #[error("robot id {id} out of range: partition has {sites} sites")]
    UnknownRobot { id: usize, sites: usize },
}

/// Whether the partition follows the robots or stays at their start sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Fixed,
    Dynamic,
}

/// Assignment of every grid cell to the nearest of a set of sites.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    sites: Vec<Point>,
    /// Row-major owner index per cell.
    assignment: Vec<usize>,
}

/// Builds the nearest-site partition of `grid`'s cells.
pub fn voronoi_assign(grid: &GridSpec, sites: &[Point]) -> Result<Partition, PartitionError> {
    if sites.is_empty() {
        return Err(PartitionError::NoSites);
    }
    let assignment = grid
        .cell_centers()
        .iter()
        .map(|center| {
            let mut owner = 0usize;
            let mut best = center.dist_sq(sites[0]);
            for (id, site) in sites.iter().enumerate().skip(1) {
                let d = center.dist_sq(*site);
                // Strict improvement only: ties stay with the lower id.
                if d < best {
                    best = d;
                    owner = id;
                }
            }
            owner
        })
        .collect();
    Ok(Partition {
        sites: sites.to_vec(),
        assignment,
    })
}

impl Partition {
    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    /// Row-major owner index per cell.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Boolean row-major mask of the cells owned by `robot`.
    pub fn region_mask(&self, robot: usize) -> Result<Vec<bool>, PartitionError> {
        if robot >= self.sites.len() {
            return Err(PartitionError::UnknownRobot {
                id: robot,
                sites: self.sites.len(),
            });
        }
        Ok(self.assignment.iter().map(|&owner| owner == robot).collect())
    }
}

/// Partition provider that hides the fixed/dynamic distinction from the
/// simulation loop.
#[derive(Debug, Clone)]
pub struct Partitioner {
    mode: PartitionMode,
    grid: GridSpec,
    fixed: Option<Partition>,
}

impl Partitioner {
    /// For [`PartitionMode::Fixed`], `initial_sites` are frozen into the
    /// partition returned for every later query.
    pub fn new(
        mode: PartitionMode,
        grid: &GridSpec,
        initial_sites: &[Point],
    ) -> Result<Self, PartitionError> {
        let fixed = match mode {
            PartitionMode::Fixed => Some(voronoi_assign(grid, initial_sites)?),
            PartitionMode::Dynamic => {
                if initial_sites.is_empty() {
                    return Err(PartitionError::NoSites);
                }
                None
            }
        };
        Ok(Partitioner {
            mode,
            grid: *grid,
            fixed,
        })
    }

    /// Partition in effect for robots currently at `positions`.
    pub fn partition(&self, positions: &[Point]) -> Result<Partition, PartitionError> {
        match (self.mode, &self.fixed) {
            (PartitionMode::Fixed, Some(p)) => Ok(p.clone()),
            (PartitionMode::Fixed, None) => unreachable!("fixed partitioner built eagerly"),
            (PartitionMode::Dynamic, _) => voronoi_assign(&self.grid, positions),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_sites() -> Vec<Point> {
        vec![Point::new(3.0, 2.0), Point::new(3.0, 10.0), Point::new(7.0, 7.0)]
    }

    #[test]
    fn every_cell_gets_exactly_one_owner() {
        let grid = GridSpec::default();
        let partition = voronoi_assign(&grid, &default_sites()).unwrap();
        assert_eq!(partition.assignment().len(), 150);
        let masks: Vec<Vec<bool>> = (0..3)
            .map(|r| partition.region_mask(r).unwrap())
            .collect();
        for idx in 0..150 {
            let owners = masks.iter().filter(|m| m[idx]).count();
            assert_eq!(owners, 1, "cell {idx} owned by {owners} robots");
        }
    }

    #[test]
    fn assignment_is_nearest_site_by_brute_force() {
        let grid = GridSpec::default();
        let sites = default_sites();
        let partition = voronoi_assign(&grid, &sites).unwrap();
        for (idx, center) in grid.cell_centers().iter().enumerate() {
            let owner = partition.assignment()[idx];
            let owner_d = center.dist_sq(sites[owner]);
            for (id, site) in sites.iter().enumerate() {
                let d = center.dist_sq(*site);
                assert!(
                    owner_d < d || (owner_d == d && owner <= id),
                    "cell {center:?}: owner {owner} at {owner_d}, site {id} at {d}"
                );
            }
        }
    }

    #[test]
    fn origin_cell_belongs_to_the_bottom_site() {
        let grid = GridSpec::default();
        let partition = voronoi_assign(&grid, &default_sites()).unwrap();
        assert_eq!(partition.assignment()[0], 0);
    }

    #[test]
    fn symmetric_sites_mirror_and_ties_go_to_lower_id() {
        let grid = GridSpec::default();
        // Sites symmetric about x = 4: cells mirror, the x = 4 column ties.
        let sites = vec![Point::new(3.0, 7.0), Point::new(5.0, 7.0)];
        let partition = voronoi_assign(&grid, &sites).unwrap();
        let centers = grid.cell_centers();
        for (idx, center) in centers.iter().enumerate() {
            let mirrored_x = 8.0 - center.x;
            if !(0.0..=9.0).contains(&mirrored_x) {
                continue;
            }
            let mirror_idx = centers
                .iter()
                .position(|c| c.x == mirrored_x && c.y == center.y)
                .unwrap();
            if center.x < 4.0 {
                assert_eq!(partition.assignment()[idx], 0);
                assert_eq!(partition.assignment()[mirror_idx], 1);
            } else if center.x == 4.0 {
                assert_eq!(partition.assignment()[idx], 0, "tie must go to robot 0");
            }
        }
    }

    #[test]
    fn unknown_robot_and_empty_sites_error() {
        let grid = GridSpec::default();
        assert!(matches!(voronoi_assign(&grid, &[]), Err(PartitionError::NoSites)));
        let partition = voronoi_assign(&grid, &default_sites()).unwrap();
        assert!(matches!(
            partition.region_mask(3),
            Err(PartitionError::UnknownRobot { id: 3, sites: 3 })
        ));
    }

    #[test]
    fn fixed_partitions_ignore_motion() {
        let grid = GridSpec::default();
        let sites = default_sites();
        let partitioner = Partitioner::new(PartitionMode::Fixed, &grid, &sites).unwrap();
        let initial = partitioner.partition(&sites).unwrap();
        let moved = vec![Point::new(0.0, 0.0), Point::new(9.0, 14.0), Point::new(5.0, 5.0)];
        let after = partitioner.partition(&moved).unwrap();
        assert_eq!(initial, after);
    }

    #[test]
    fn dynamic_partition_tracks_positions() {
        let grid = GridSpec::default();
        let sites = default_sites();
        let partitioner = Partitioner::new(PartitionMode::Dynamic, &grid, &sites).unwrap();
        // Stationary robots: identical to the fixed partition.
        let stationary = partitioner.partition(&sites).unwrap();
        assert_eq!(stationary, voronoi_assign(&grid, &sites).unwrap());
        // Moved robots: matches a fresh brute-force assignment.
        let moved = vec![Point::new(1.0, 1.0), Point::new(8.0, 2.0), Point::new(4.0, 12.0)];
        let dynamic = partitioner.partition(&moved).unwrap();
        assert_eq!(dynamic, voronoi_assign(&grid, &moved).unwrap());
        assert_ne!(dynamic, stationary);
    }
}

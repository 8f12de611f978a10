use super::{EnvDescriptor, EnvKind, Physics};
use crate::policy::ActionDist;

/// Gains of the scripted tracker, in action units per observation unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertGains {
    pub kp_pos: f64,
    pub kd_vel: f64,
    pub kp_heading: f64,
    pub kd_yaw_rate: f64,
    pub kp_alt: f64,
    pub kd_climb: f64,
    pub sigma: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        ExpertGains {
            kp_pos: 25.0,
            kd_vel: 9.0,
            kp_heading: 2.0,
            kd_yaw_rate: 2.0,
            kp_alt: 25.0,
            kd_climb: 9.0,
            sigma: 0.05,
        }
    }
}

/// Proportional-derivative tracker with command feed-forward, reading only
/// the observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub gains: ExpertGains,
    kind: EnvKind,
    physics: Physics,
}

impl Expert {
    pub fn new(desc: &EnvDescriptor, gains: ExpertGains) -> Self {
        Expert {
            gains,
            kind: desc.kind,
            physics: desc.physics,
        }
    }

    pub fn mean(&self, obs: &[f64]) -> Vec<f64> {
        let g = &self.gains;
        let ph = &self.physics;
        let (ev, yaw_rate_err, heading_err, ep) = ([obs[0], obs[1]], obs[2], obs[3], [obs[4], obs[5]]);
        let (speed, yaw) = (obs[16], obs[17]);
        let mut mu = vec![
            ph.drag * speed - g.kp_pos * ep[0] - g.kd_vel * ev[0],
            speed * yaw - g.kp_pos * ep[1] - g.kd_vel * ev[1],
            ph.yaw_drag * yaw - g.kp_heading * heading_err - g.kd_yaw_rate * yaw_rate_err,
            0.0,
        ];
        if self.kind == EnvKind::Flight {
            let (alt_err, climb_err, climb) = (obs[18], obs[19], obs[20]);
            mu.push(ph.gravity + ph.drag * climb - g.kp_alt * alt_err - g.kd_climb * climb_err);
            mu.push(0.0);
        }
        mu
    }

    pub fn dist(&self, obs: &[f64]) -> ActionDist<f64> {
        let mu = self.mean(obs);
        let sigma = vec![self.gains.sigma; mu.len()];
        ActionDist { mu, sigma }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Command, WALK_OBS_DIM};

    fn walk_expert() -> Expert {
        Expert::new(&EnvDescriptor::new(EnvKind::Walk, Command::walk(0.0, 0.0)), ExpertGains::default())
    }

    #[test]
    fn on_reference_gives_zero_mean() {
        let d = walk_expert().dist(&[0.0; WALK_OBS_DIM]);
        assert_eq!(d.mu, vec![0.0; 4]);
        assert_eq!(d.sigma, vec![0.05; 4]);
    }

    #[test]
    fn heading_error_maps_to_yaw_torque() {
        let mut obs = [0.0; WALK_OBS_DIM];
        obs[3] = 0.1;
        let mu = walk_expert().mean(&obs);
        assert!((mu[2] + 0.2).abs() < 1e-15);
        assert_eq!((mu[0], mu[1], mu[3]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn sigma_is_constant() {
        let e = walk_expert();
        let obs: Vec<f64> = (0..WALK_OBS_DIM).map(|i| i as f64 - 3.0).collect();
        assert!(e.dist(&obs).sigma.iter().all(|&s| s == 0.05));
    }
}

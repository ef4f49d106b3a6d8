//! Per-feature DQN agents: a two-layer perceptron Q-network, a periodically
//! synchronized target copy, a bounded replay buffer and Adam.

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

/// Number of actions: 0 = deselect, 1 = select.
pub const N_ACTIONS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

struct Forward {
    hidden: Array2<f64>,
    q: Array2<f64>,
}

impl QNetwork {
    /// Uniform `+-1/sqrt(fan_in)` hidden layer, zero output layer.
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut u = |fan_in: usize, shape: (usize, usize)| {
            let b = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn(shape, |_| rng.random_range(-b..b))
        };
        let w1 = u(input, (input, hidden));
        let b1 = u(input, (1, hidden)).remove_axis(Axis(0));
        // A zero output layer starts both actions at Q = 0, so early
        // preferences come from rewards rather than from init noise that
        // is orders of magnitude larger than a shared reward.
        let w2 = Array2::zeros((hidden, N_ACTIONS));
        let b2 = Array1::zeros(N_ACTIONS);
        QNetwork { w1, b1, w2, b2 }
    }

    fn forward(&self, x: &Array2<f64>) -> Forward {
        let hidden = (x.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        let q = hidden.dot(&self.w2) + &self.b2;
        Forward { hidden, q }
    }

    pub fn q_values(&self, state: &[f64]) -> [f64; N_ACTIONS] {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row vector");
        let q = self.forward(&x).q;
        [q[[0, 0]], q[[0, 1]]]
    }

    /// Greedy action; ties go to action 0.
    pub fn greedy(&self, state: &[f64]) -> usize {
        let q = self.q_values(state);
        usize::from(q[1] > q[0])
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(net: &QNetwork, lr: f64) -> Self {
        let sizes = [net.w1.len(), net.b1.len(), net.w2.len(), net.b2.len()];
        Adam {
            lr,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, net: &mut QNetwork, grads: [&[f64]; 4]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (k, p) in net.params_mut().into_iter().enumerate() {
            for (i, w) in p.iter_mut().enumerate() {
                let g = grads[k][i];
                self.m[k][i] = B1 * self.m[k][i] + (1.0 - B1) * g;
                self.v[k][i] = B2 * self.v[k][i] + (1.0 - B2) * g * g;
                *w -= self.lr * (self.m[k][i] / c1) / ((self.v[k][i] / c2).sqrt() + EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<Vec<f64>>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Arc<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `n` distinct transitions chosen uniformly, or `None` if the buffer
    /// holds fewer than `n`.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Option<Vec<&Transition>> {
        if self.items.len() < n || n == 0 {
            return None;
        }
        Some(
            rand::seq::index::sample(rng, self.items.len(), n)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}

/// One feature's agent.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub q_network: QNetwork,
    pub target_network: QNetwork,
    pub buffer: ReplayBuffer,
    pub epsilon: f64,
    adam: Adam,
}

impl AgentState {
    pub fn new(
        state_dim: usize,
        hidden: usize,
        capacity: usize,
        epsilon: f64,
        learning_rate: f64,
        rng: &mut Rng,
    ) -> Self {
        let q = QNetwork::new(state_dim, hidden, rng);
        AgentState {
            target_network: q.clone(),
            adam: Adam::new(&q, learning_rate),
            q_network: q,
            buffer: ReplayBuffer::new(capacity),
            epsilon,
        }
    }

    /// Epsilon-greedy action.
    pub fn act(&self, state: &[f64], rng: &mut Rng) -> usize {
        if rng.random::<f64>() < self.epsilon {
            rng.random_range(0..N_ACTIONS)
        } else {
            self.q_network.greedy(state)
        }
    }

    pub fn sync_target(&mut self) {
        self.target_network = self.q_network.clone();
    }
}

/// One gradient step on the mean squared TD error of `batch` against
/// `r + discount * max_a Q_target(s', a)`. Returns the loss before the step.
pub fn dqn_update(agent: &mut AgentState, batch: &[&Transition], discount: f64) -> f64 {
    let n = batch.len();
    let dim = batch[0].state.len();
    let mut s = Array2::zeros((n, dim));
    let mut s2 = Array2::zeros((n, dim));
    for (i, t) in batch.iter().enumerate() {
        s.row_mut(i).assign(&ndarray::ArrayView1::from(t.state.as_slice()));
        s2.row_mut(i).assign(&ndarray::ArrayView1::from(t.next_state.as_slice()));
    }
    let next_q = agent.target_network.forward(&s2).q;
    let fwd = agent.q_network.forward(&s);

    let mut dq = Array2::<f64>::zeros((n, N_ACTIONS));
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let best_next = next_q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let target = t.reward + discount * best_next;
        let err = fwd.q[[i, t.action]] - target;
        loss += err * err;
        dq[[i, t.action]] = 2.0 * err / n as f64;
    }
    loss /= n as f64;

    let net = &agent.q_network;
    let gw2 = fwd.hidden.t().dot(&dq);
    let gb2 = dq.sum_axis(Axis(0));
    let mut dh = dq.dot(&net.w2.t());
    dh.zip_mut_with(&fwd.hidden, |g, &h| {
        if h <= 0.0 {
            *g = 0.0
        }
    });
    let gw1 = s.t().dot(&dh);
    let gb1 = dh.sum_axis(Axis(0));
    let (gw1, gb1, gw2, gb2) = (
        gw1.as_standard_layout().into_owned(),
        gb1,
        gw2.as_standard_layout().into_owned(),
        gb2,
    );
    agent.adam.step(
        &mut agent.q_network,
        [
            gw1.as_slice().expect("standard"),
            gb1.as_slice().expect("standard"),
            gw2.as_slice().expect("standard"),
            gb2.as_slice().expect("standard"),
        ],
    );
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn transition(state: Vec<f64>, action: usize, reward: f64, next: Vec<f64>) -> Transition {
        Transition {
            state: Arc::new(state),
            action,
            reward,
            next_state: Arc::new(next),
        }
    }

    #[test]
    fn immediate_reward_fixed_point() {
        let mut rng = seeded(1);
        let mut agent = AgentState::new(3, 16, 100, 0.0, 1e-2, &mut rng);
        let t = transition(vec![0.5, -0.2, 0.1], 1, 0.7, vec![0.0, 0.3, 0.2]);
        for _ in 0..2000 {
            dqn_update(&mut agent, &[&t], 0.0);
        }
        let q = agent.q_network.q_values(&t.state)[1];
        assert!((q - 0.7).abs() < 1e-2, "q = {q}");
    }

    #[test]
    fn zero_td_error_leaves_parameters() {
        let mut rng = seeded(2);
        let mut agent = AgentState::new(2, 8, 10, 0.0, 1e-2, &mut rng);
        let s = vec![0.3, 0.4];
        let q_sa = agent.q_network.q_values(&s)[0];
        // terminal-like: discount 0 and reward equal to current estimate
        let t = transition(s, 0, q_sa, vec![0.0, 0.0]);
        let before = agent.q_network.clone();
        let loss = dqn_update(&mut agent, &[&t], 0.0);
        assert_eq!(loss, 0.0);
        assert_eq!(agent.q_network, before);
    }

    #[test]
    fn loss_nonnegative_and_buffer_bounded() {
        let mut rng = seeded(3);
        let mut agent = AgentState::new(2, 4, 5, 0.5, 1e-3, &mut rng);
        for i in 0..12 {
            agent
                .buffer
                .push(transition(vec![i as f64, 1.0], i % 2, -1.0, vec![1.0, i as f64]));
        }
        assert_eq!(agent.buffer.len(), 5);
        assert!(agent.buffer.sample(6, &mut rng).is_none());
        let batch: Vec<Transition> = agent.buffer.sample(4, &mut rng).unwrap().into_iter().cloned().collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        assert!(dqn_update(&mut agent, &refs, 0.9) >= 0.0);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = seeded(4);
        let agent = AgentState::new(3, 5, 10, 0.0, 1.0, &mut rng);
        let batch = vec![
            transition(vec![0.2, -0.1, 0.4], 1, 0.3, vec![0.1, 0.1, 0.1]),
            transition(vec![-0.3, 0.5, 0.2], 0, -0.2, vec![0.0, 0.2, -0.1]),
        ];
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss_of = |net: &QNetwork| {
            let mut a = agent.clone();
            a.q_network = net.clone();
            let mut probe = a.clone();
            dqn_update(&mut probe, &refs, 0.5)
        };
        // one Adam step with lr tiny moves along -sign(grad); compare signs
        // against central differences on w2[0][0]
        let h = 1e-6;
        let mut plus = agent.q_network.clone();
        plus.w2[[0, 1]] += h;
        let mut minus = agent.q_network.clone();
        minus.w2[[0, 1]] -= h;
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        let mut stepped = agent.clone();
        stepped.adam.lr = 1e-9;
        dqn_update(&mut stepped, &refs, 0.5);
        let moved = stepped.q_network.w2[[0, 1]] - agent.q_network.w2[[0, 1]];
        if fd.abs() > 1e-9 {
            assert_eq!(moved.signum(), -fd.signum());
        }
    }
}

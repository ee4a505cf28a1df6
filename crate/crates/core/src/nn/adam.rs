use super::network::{Network, Scalar};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Network<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = net
            .param_slices()
            .iter()
            .map(|s| vec![T::zero(); s.len()])
            .collect();
        let c = |v: f64| T::from_f64(v).expect("finite");
        Self {
            lr: c(lr),
            beta1: c(0.9),
            beta2: c(0.999),
            eps: c(1e-8),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Network<T>) {
        self.step += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.step);
        let bc2 = one - self.beta2.powi(self.step);
        let grads = grads.param_slices();
        for (((p, g), m), v) in net
            .param_slices_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

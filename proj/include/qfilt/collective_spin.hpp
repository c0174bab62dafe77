#pragma once

#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "qfilt/operator_algebra.hpp"

namespace qfilt {

/// Binomial-based counts in floating point (exact below 2^53):
/// alpha^J_N = C(N, N/2 - J), d^J_N = alpha^J_N - alpha^{J+1}_N. Invalid (J, N) pairs give 0.
double irrep_degeneracy(int twoJ, int N);
double irrep_alpha(int twoJ, int N);

/// Number of effective (J, M) states: (N+3)(N+1)/4 for odd N, (N+2)^2/4 for even N.
long collective_dim(int N);

/// Collective state of N qubits. blocks[i] holds the per-irrep elements rho_{J,M;J,M'} for 2J = N - 2i,
/// ordered M = J, J-1, ..., -J. Physical expectations weight each block by d^J_N.
struct CollectiveDensity {
    int N = 0;
    std::vector<Operator> blocks;

    static CollectiveDensity zero(int N);
    std::size_t block_count() const { return blocks.size(); }
    int twoJ(std::size_t i) const { return N - 2 * static_cast<int>(i); }
    /// Index of the block with the given 2J; throws InvalidArgument when absent.
    std::size_t index_of(int twoJ) const;
    Operator& block(int twoJ) { return blocks[index_of(twoJ)]; }
    const Operator& block(int twoJ) const { return blocks[index_of(twoJ)]; }

    double physical_trace() const;
    /// Physical trace within 1e-9 and Hermitian blocks within 1e-10.
    bool is_valid() const;
    double max_abs() const;
};

CollectiveDensity operator+(const CollectiveDensity& a, const CollectiveDensity& b);
CollectiveDensity operator*(double c, const CollectiveDensity& a);

/// Pure state living in the top block 2J = N.
CollectiveDensity top_block_state(int N, const Ket& psi);
/// (|N/2, N/2> + |N/2, -N/2>) / sqrt(2)
CollectiveDensity cat_state(int N);
/// |N/2, N/2>
CollectiveDensity coherent_up(int N);

enum class SpinIndex { plus, minus, z };

struct GTerm {
    double J;
    double M;
    double Mp;
    double coefficient;
};

/// sum_n s_q^(n) |J,M><J,M'| (s_r^(n))^dag expressed in effective elements of blocks J, J-1 and J+1.
/// Here s_+ and s_- are the qubit raising and lowering operators and s_z = sigma_z / 2. Elements are the
/// normalized sums (1/d^J_N) sum_i |J,M,i><J,M',i| over irrep copies, so a per-irrep coefficient is the
/// returned coefficient times d^J_N / d^{J_out}_N.
std::vector<GTerm> g_tensor_apply(SpinIndex q, SpinIndex r, double J, double M, double Mp, int N);

/// s = sI I + sp sigma_+ + sm sigma_- + sz sigma_z with rate Gamma.
/// symmetric: Gamma sum_n D[s^(n)]; collective: Gamma D[sum_n s^(n)].
struct SpinChannel {
    cplx sI = 0.0, sp = 0.0, sm = 0.0, sz = 0.0;
    double rate = 0.0;
    bool collective = false;

    void validate() const;
    static SpinChannel symmetric(char op, double rate);  // op in {+, -, z}
    static SpinChannel collective_of(char op, double rate);
};

/// Hamiltonian as a sum of coefficient * word, each word a product over {+, -, z} of the block
/// spin operators J_+, J_-, J_z (J_z has eigenvalues M).
struct HamiltonianTerm {
    cplx coefficient;
    std::string word;
};
using CollectiveHamiltonian = std::vector<HamiltonianTerm>;

/// -i Lambda (J_+^2 - J_-^2)
CollectiveHamiltonian counter_twisting(double Lambda);

/// Precomputed block-sparse generator for dynamics -i[H, rho] + sum of channels.
class CollectiveEvolver {
public:
    CollectiveEvolver(int N, const CollectiveHamiltonian& H, const std::vector<SpinChannel>& channels);

    CollectiveDensity rhs(const CollectiveDensity& rho) const;
    /// Classical RK4 step; throws NumericFailure on non-finite output.
    void step(CollectiveDensity& rho, double dt) const;
    int N() const { return N_; }

private:
    using Sparse = Eigen::SparseMatrix<cplx>;
    struct Transfer {
        std::size_t from, to;
        double weight;
        Sparse T;
    };
    struct ChannelBlocks {
        double rate;
        bool collective;
        cplx sI;
        std::vector<Sparse> C, SN;      // per block
        std::vector<Transfer> transfers;
    };
    int N_;
    std::vector<Sparse> H_;
    std::vector<ChannelBlocks> channels_;
};

/// Derivative of rho under a single channel with unit Hamiltonian-free dynamics.
CollectiveDensity symmetric_lindblad_apply(const SpinChannel& channel, const CollectiveDensity& rho);

CollectiveDensity collective_master_step(const CollectiveHamiltonian& H, const std::vector<SpinChannel>& channels,
                                         const CollectiveDensity& rho, double dt);

/// N_J = d^J_N Tr[rho_J]
double irrep_population(const CollectiveDensity& rho, int twoJ);

/// <psi| rho |psi> for psi in the top block.
double top_block_fidelity(const CollectiveDensity& rho, const Ket& psi);

/// Physical expectation sum_J d^J_N Tr[A_J rho_J] of a block operator built from a word over {+, -, z}.
cplx collective_expectation(const CollectiveDensity& rho, const std::string& word);

/// xi^2 = N <Delta J_y^2> / <J_z>^2; throws UndefinedMetric when <J_z> vanishes.
double squeezing_xi2(const CollectiveDensity& rho);

}  // namespace qfilt

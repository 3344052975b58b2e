#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lstrl/backbone.hpp"
#include "lstrl/gradcheck.hpp"
#include "lstrl/losses.hpp"

namespace lstrl {

// Finite-difference verification of every differentiable operation and of
// both blocks, at f64. Each entry runs the requested number of random seeds
// and reports the worst relative error.
struct SuiteEntry {
  std::string name;
  double rel_tol = 1e-4;
  std::function<GradCheckResult(std::size_t seeds, double corrupt)> run;
};

namespace detail {

// loss = sum(out * probe): a fixed random probe makes upstream gradients
// non-uniform without changing what is being checked
inline double probe_and_backward(Tape<double>& tape, Var out,
                                 const DenseTensor<double>& probe, bool with_grad) {
  auto flat = tape.reshape(out, {tape.value(out).size(), 1});
  auto row = tape.input(DenseTensor<double>({1, probe.size()}, probe.data));
  auto loss = tape.matmul(row, flat);
  const double v = tape.value(loss).data[0];
  if (with_grad)
    tape.backward(loss);
  else
    tape.reset();
  return v;
}

using ExtraParams = std::vector<ParamTensor<double>*>;

template <typename BuildFn>
GradCheckResult run_probed(std::size_t seeds, double corrupt, std::size_t probe_size,
                           BuildFn build) {
  GradCheckResult worst;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    Rng rng(0x5eed0 + seed * 7919);
    std::vector<ParamTensor<double>> params;
    params.reserve(8);
    ExtraParams extra;  // non-owned params living inside block structs
    auto graph = build(rng, params, extra);  // returns fn(Tape&) -> Var
    DenseTensor<double> probe =
        DenseTensor<double>::random_uniform({probe_size}, rng, -1.0, 1.0);
    std::vector<ParamTensor<double>*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    ptrs.insert(ptrs.end(), extra.begin(), extra.end());
    GradCheckOptions opt;
    opt.corrupt_factor = corrupt;
    auto fn = [&](bool wg) {
      Tape<double> tape;
      return probe_and_backward(tape, graph(tape), probe, wg);
    };
    auto res = check_gradients<double>(ptrs, fn, opt);
    if (!res.pass || res.max_rel_err > worst.max_rel_err) {
      worst.max_rel_err = std::max(worst.max_rel_err, res.max_rel_err);
      worst.worst_param = res.worst_param;
    }
    worst.entries += res.entries;
    worst.pass = worst.pass && res.pass;
  }
  return worst;
}

}  // namespace detail

inline std::vector<SuiteEntry> gradcheck_suite() {
  using detail::run_probed;
  using Params = std::vector<ParamTensor<double>>;
  std::vector<SuiteEntry> suite;

  suite.push_back({"matmul", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 15, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("a", DenseTensor<double>::random_uniform({3, 4}, rng, -1, 1));
      ps.emplace_back("b", DenseTensor<double>::random_uniform({4, 5}, rng, -1, 1));
      return [&ps](Tape<double>& t) { return t.matmul(t.param(ps[0]), t.param(ps[1])); };
    });
  }});
  suite.push_back({"transpose2d", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 12, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({3, 4}, rng, -1, 1));
      return [&ps](Tape<double>& t) { return t.transpose2d(t.param(ps[0])); };
    });
  }});
  suite.push_back({"softmax_rows", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 12, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({3, 4}, rng, -2, 2));
      return [&ps](Tape<double>& t) { return t.softmax_rows(t.param(ps[0])); };
    });
  }});
  suite.push_back({"reduce_mean", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 8, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({2, 3, 4}, rng, -1, 1));
      return [&ps](Tape<double>& t) { return t.reduce_mean(t.param(ps[0]), {1}); };
    });
  }});
  suite.push_back({"pointwise_affine", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 2 * 2 * 5, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({2, 2, 3}, rng, -1, 1));
      ps.emplace_back("w", DenseTensor<double>::random_uniform({3, 5}, rng, -1, 1));
      ps.emplace_back("b", DenseTensor<double>::random_uniform({5}, rng, -0.5, 0.5));
      return [&ps](Tape<double>& t) {
        return t.pointwise_affine(t.param(ps[0]), ps[1], ps[2], false);
      };
    });
  }});
  suite.push_back({"pointwise_affine_relu", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 2 * 2 * 5, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({2, 2, 3}, rng, -1, 1));
      ps.emplace_back("w", DenseTensor<double>::random_uniform({3, 5}, rng, -1, 1));
      ps.emplace_back("b", DenseTensor<double>::random_uniform({5}, rng, -0.5, 0.5));
      return [&ps](Tape<double>& t) {
        return t.pointwise_affine(t.param(ps[0]), ps[1], ps[2], true);
      };
    });
  }});
  suite.push_back({"concat_channels", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 3 * 5, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("a", DenseTensor<double>::random_uniform({3, 2}, rng, -1, 1));
      ps.emplace_back("b", DenseTensor<double>::random_uniform({3, 3}, rng, -1, 1));
      return [&ps](Tape<double>& t) {
        return t.concat_channels({t.param(ps[0]), t.param(ps[1])});
      };
    });
  }});
  suite.push_back({"stack_rows", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 2 * 4, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("a", DenseTensor<double>::random_uniform({4}, rng, -1, 1));
      ps.emplace_back("b", DenseTensor<double>::random_uniform({4}, rng, -1, 1));
      return [&ps](Tape<double>& t) {
        return t.stack_rows({t.param(ps[0]), t.param(ps[1])});
      };
    });
  }});
  suite.push_back({"broadcast_hadamard", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 2 * 2 * 3, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("g", DenseTensor<double>::random_uniform({1, 1, 3}, rng, -1, 1));
      ps.emplace_back("l", DenseTensor<double>::random_uniform({2, 2, 3}, rng, -1, 1));
      return [&ps](Tape<double>& t) {
        return t.broadcast_hadamard(t.param(ps[0]), t.param(ps[1]));
      };
    });
  }});
  suite.push_back({"tile_repeat_rows", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 12 * 2, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({2, 2}, rng, -1, 1));
      return [&ps](Tape<double>& t) {
        return t.concat_channels({t.tile_rows(t.param(ps[0]), 3),
                                  t.repeat_rows(t.param(ps[0]), 3)});
      };
    });
  }});
  suite.push_back({"select_index0", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 6, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({3, 2, 3}, rng, -1, 1));
      return [&ps](Tape<double>& t) { return t.select_index0(t.param(ps[0]), 1); };
    });
  }});
  suite.push_back({"unfold3x3", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 2 * 2 * 2 * 18, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({2, 2, 2, 2}, rng, -1, 1));
      return [&ps](Tape<double>& t) { return t.unfold3x3(t.param(ps[0])); };
    });
  }});
  suite.push_back({"avgpool2x2", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 2 * 1 * 2 * 3, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({2, 2, 4, 3}, rng, -1, 1));
      return [&ps](Tape<double>& t) { return t.avgpool2x2(t.param(ps[0])); };
    });
  }});
  suite.push_back({"reshape_add_scale", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 6, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("x", DenseTensor<double>::random_uniform({2, 3}, rng, -1, 1));
      return [&ps](Tape<double>& t) {
        auto r = t.reshape(t.param(ps[0]), {3, 2});
        return t.add(t.scale(r, 0.5), r);
      };
    });
  }});
  suite.push_back({"cross_entropy", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 1, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("logits", DenseTensor<double>::random_uniform({4, 5}, rng, -2, 2));
      std::vector<int> labels;
      for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.uniform_index(5)));
      return [&ps, labels](Tape<double>& t) {
        return cross_entropy(t, t.param(ps[0]), labels);
      };
    });
  }});
  suite.push_back({"batch_hard_triplet", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 1, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      ps.emplace_back("emb", DenseTensor<double>::random_uniform({6, 3}, rng, -1, 1));
      const double margin = rng.uniform(0.1, 3.0);
      return [&ps, margin](Tape<double>& t) {
        return batch_hard_triplet(t, t.param(ps[0]), {0, 0, 1, 1, 2, 2}, margin);
      };
    });
  }});
  suite.push_back({"mae_block", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 2 * 2 * 1 * 4, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      const std::size_t c = 4;
      auto mp = std::make_shared<MaeParams<double>>(
          MaeParams<double>::init("mae", c, {true, true, true, true}, rng.next_u64()));
      mp->omega2_w.value = glorot_uniform<double>({c, c}, c, c, rng);
      extra = {&mp->omega1_w, &mp->omega1_b, &mp->omega2_w, &mp->omega2_b};
      ps.emplace_back("f", DenseTensor<double>::random_uniform({2, 2, 1, c}, rng, -1, 1));
      return [&ps, mp](Tape<double>& t) { return mae_forward(t, t.param(ps[0]), *mp); };
    });
  }});
  suite.push_back({"bme_block", 1e-4, [](std::size_t seeds, double corrupt) {
    return run_probed(seeds, corrupt, 3 * 2 * 2 * 4, [](Rng& rng, Params& ps, detail::ExtraParams& extra) {
      (void)extra;
      const std::size_t c = 4;
      auto manner = (rng.next_u64() & 1) ? MotionManner::local_to_local
                                         : MotionManner::global_to_local;
      auto bp = std::make_shared<BmeParams<double>>(BmeParams<double>::init(
          "bme", c, manner, MotionDirection::bi, rng.next_u64()));
      bp->upsilon_w.value = glorot_uniform<double>({c, c}, c, c, rng);
      extra = {&bp->phi_w, &bp->phi_b, &bp->psi_w, &bp->psi_b, &bp->upsilon_w,
               &bp->upsilon_b};
      ps.emplace_back("f", DenseTensor<double>::random_uniform({3, 2, 2, c}, rng, -1, 1));
      return [&ps, bp](Tape<double>& t) { return bme_forward(t, t.param(ps[0]), *bp); };
    });
  }});
  suite.push_back({"backbone_end_to_end", 1e-3, [](std::size_t seeds, double corrupt) {
    GradCheckResult worst;
    for (std::size_t seed = 0; seed < seeds; ++seed) {
      Rng rng(0xe2e + seed * 104729);
      BackboneConfig cfg;
      cfg.stage_channels = {4, 4, 4, 4};
      cfg.input_h = 8;
      cfg.input_w = 8;
      cfg.num_identities = 3;
      auto model = std::make_shared<Model<double>>(cfg, rng.next_u64());
      for (auto& [name, p] : model->named_params()) {
        if (name.find("omega2.w") != std::string::npos ||
            name.find("upsilon.w") != std::string::npos) {
          const auto s = p->value.shape;
          p->value = glorot_uniform<double>(s, s[0], s[1], rng);
        }
      }
      auto clip = DenseTensor<double>::random_uniform({2, 8, 8, 3}, rng, 0, 1);
      DenseTensor<double> probe = DenseTensor<double>::random_uniform({3}, rng, -1, 1);
      std::vector<ParamTensor<double>*> ptrs;
      for (auto& [name, p] : model->named_params()) ptrs.push_back(p);
      GradCheckOptions opt;
      opt.rel_tol = 1e-3;
      opt.corrupt_factor = corrupt;
      auto fn = [&](bool wg) {
        Tape<double> tape;
        auto out = model->encode_clip(tape, tape.input(clip));
        return detail::probe_and_backward(tape, out.logits, probe, wg);
      };
      auto res = check_gradients<double>(ptrs, fn, opt);
      if (!res.pass || res.max_rel_err > worst.max_rel_err) {
        worst.max_rel_err = std::max(worst.max_rel_err, res.max_rel_err);
        worst.worst_param = res.worst_param;
      }
      worst.entries += res.entries;
      worst.pass = worst.pass && res.pass;
    }
    return worst;
  }});
  return suite;
}

}  // namespace lstrl

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "csc/trainer.hpp"

namespace csc::train {

// Checkpoint file: a text manifest (parameter names, shapes, optimizer/RNG
// state, hyperparameters) terminated by a BINARY line, then the raw
// little-endian tensor payload in manifest order. Round-trips bit-exactly.
struct CheckpointCodec {
    static std::string hex(real_t v) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%a", static_cast<double>(v));
        return buf;
    }
    static real_t unhex(const std::string& s) {
        return static_cast<real_t>(std::strtod(s.c_str(), nullptr));
    }

    static void save(const Trainer& tr, const std::string& path) {
        const net::Autoencoder& model = *tr.model_;
        const net::ArchitectureSpec& spec = model.spec();
        std::ostringstream man;
        std::vector<const Tensor*> payload;
        auto put_tensor = [&](const std::string& name, const Tensor& t) {
            man << "tensor " << name << ' ' << t.rank();
            for (std::int64_t d : t.shape()) man << ' ' << d;
            man << '\n';
            payload.push_back(&t);
        };

        man << "CSCKPT 1\n";
        man << "arch " << spec.name << ' ' << spec.in_channels << ' ' << spec.input_size << ' '
            << spec.layers.size() << '\n';
        for (const auto& l : spec.layers) {
            man << "layer " << l.out_channels << ' ' << l.kernel << ' ' << l.stride << ' '
                << l.padding << ' ' << net::to_string(l.enc_norm) << ' '
                << net::to_string(l.enc_act) << ' ' << net::to_string(l.dec_norm) << ' '
                << net::to_string(l.dec_act) << '\n';
        }
        const FistaConfig& f = model.fista();
        man << "fista " << hex(f.lambda) << ' ' << f.iterations << ' ' << hex(f.step_size) << ' '
            << f.power_iters << ' ' << hex(f.lipschitz_margin) << ' ' << (f.nesterov ? 1 : 0)
            << ' ' << hex(f.divergence_factor) << '\n';
        const TrainConfig& c = tr.cfg_;
        man << "rate " << hex(c.rate.eps_sq) << '\n';
        man << "train " << c.strategy << ' ' << hex(c.lr_max) << ' ' << hex(c.lr_min) << ' '
            << hex(c.beta1) << ' ' << hex(c.beta2) << ' ' << hex(c.adam_eps) << ' '
            << c.batch_size << ' ' << c.steps << ' ' << c.seed << ' ' << c.lipschitz_refresh
            << ' ' << (c.ascent_first_pass_only ? 1 : 0) << ' ' << c.checkpoint_every << ' '
            << (c.timing ? 1 : 0) << '\n';
        man << "step " << tr.step_ << '\n';
        man << "rng ";
        tr.rng_.save(man);
        man << '\n';

        const auto& dicts = model.dictionaries();
        for (std::size_t i = 0; i < dicts.size(); ++i) {
            for (const auto& [key, value] : dicts[i]->cached_lipschitz()) {
                std::uint64_t bits;
                const double dv = static_cast<double>(value);
                std::memcpy(&bits, &dv, sizeof(bits));
                man << "lipschitz " << i << ' ' << key.first << ' ' << key.second << ' ' << bits
                    << '\n';
            }
        }

        for (const auto& p : model.parameters()) put_tensor("p." + p->name, p->value);
        auto put_bn = [&](const char* tag, const std::vector<std::optional<net::BnBlock>>& side) {
            for (std::size_t i = 0; i < side.size(); ++i) {
                if (!side[i]) continue;
                put_tensor(std::string(tag) + std::to_string(i) + ".mean", side[i]->stats.mean);
                put_tensor(std::string(tag) + std::to_string(i) + ".var", side[i]->stats.var);
            }
        };
        put_bn("ebn.", model.encoder_bn());
        put_bn("dbn.", model.decoder_bn());
        auto put_moments = [&](const char* role, const std::map<std::string, AdamState>& ms) {
            for (const auto& [name, st] : ms) {
                if (st.m.empty()) continue;
                man << "adam_t " << role << ' ' << name << ' ' << st.t << '\n';
                put_tensor(std::string("am.") + role + "." + name + ".m", st.m);
                put_tensor(std::string("am.") + role + "." + name + ".v", st.v);
            }
        };
        put_moments("a", tr.ascent_moments_);
        put_moments("d", tr.descent_moments_);
        man << "BINARY\n";

        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path);
        const std::string header = man.str();
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (const Tensor* t : payload) {
            out.write(reinterpret_cast<const char*>(t->data()),
                      static_cast<std::streamsize>(sizeof(real_t)) * t->size());
        }
        if (!out) throw IoError("short write to " + path);
    }

    static Trainer load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        std::string line;
        auto next_line = [&]() -> std::string& {
            if (!std::getline(in, line)) throw IoError(path + ": truncated manifest");
            return line;
        };
        {
            std::istringstream ls(next_line());
            std::string magic;
            int version = 0;
            ls >> magic >> version;
            if (magic != "CSCKPT" || version != 1) throw IoError(path + ": bad header");
        }

        net::ArchitectureSpec spec;
        std::size_t n_layers = 0;
        {
            std::istringstream ls(next_line());
            std::string tag;
            ls >> tag >> spec.name >> spec.in_channels >> spec.input_size >> n_layers;
            if (tag != "arch") throw IoError(path + ": expected arch line");
        }
        for (std::size_t i = 0; i < n_layers; ++i) {
            std::istringstream ls(next_line());
            std::string tag, en, ea, dn, da;
            net::LayerDesc l;
            ls >> tag >> l.out_channels >> l.kernel >> l.stride >> l.padding >> en >> ea >> dn >>
                da;
            if (tag != "layer") throw IoError(path + ": expected layer line");
            l.enc_norm = net::norm_from_string(en);
            l.enc_act = net::act_from_string(ea);
            l.dec_norm = net::norm_from_string(dn);
            l.dec_act = net::act_from_string(da);
            spec.layers.push_back(l);
        }

        FistaConfig fista;
        {
            std::istringstream ls(next_line());
            std::string tag, lam, step, margin, divf;
            int nesterov = 1;
            ls >> tag >> lam >> fista.iterations >> step >> fista.power_iters >> margin >>
                nesterov >> divf;
            if (tag != "fista") throw IoError(path + ": expected fista line");
            fista.lambda = unhex(lam);
            fista.step_size = unhex(step);
            fista.lipschitz_margin = unhex(margin);
            fista.nesterov = nesterov != 0;
            fista.divergence_factor = unhex(divf);
        }
        TrainConfig cfg;
        {
            std::istringstream ls(next_line());
            std::string tag, eps;
            ls >> tag >> eps;
            if (tag != "rate") throw IoError(path + ": expected rate line");
            cfg.rate.eps_sq = unhex(eps);
        }
        {
            std::istringstream ls(next_line());
            std::string tag, lrmax, lrmin, b1, b2, aeps;
            int first_pass = 0, timing = 0;
            ls >> tag >> cfg.strategy >> lrmax >> lrmin >> b1 >> b2 >> aeps >> cfg.batch_size >>
                cfg.steps >> cfg.seed >> cfg.lipschitz_refresh >> first_pass >>
                cfg.checkpoint_every >> timing;
            if (tag != "train") throw IoError(path + ": expected train line");
            cfg.lr_max = unhex(lrmax);
            cfg.lr_min = unhex(lrmin);
            cfg.beta1 = unhex(b1);
            cfg.beta2 = unhex(b2);
            cfg.adam_eps = unhex(aeps);
            cfg.ascent_first_pass_only = first_pass != 0;
            cfg.timing = timing != 0;
        }

        auto model = std::make_shared<net::Autoencoder>(spec, fista, cfg.seed);
        Trainer tr(model, cfg);
        {
            std::istringstream ls(next_line());
            std::string tag;
            ls >> tag >> tr.step_;
            if (tag != "step") throw IoError(path + ": expected step line");
        }
        {
            std::string& l = next_line();
            if (l.rfind("rng ", 0) != 0) throw IoError(path + ": expected rng line");
            std::istringstream ls(l.substr(4));
            tr.rng_.load(ls);
        }

        // Remaining manifest: lipschitz caches, adam counters, tensor table.
        struct TensorEntry {
            std::string name;
            std::vector<std::int64_t> shape;
        };
        std::vector<TensorEntry> entries;
        std::map<std::string, std::int64_t> adam_t_a, adam_t_d;
        while (true) {
            std::string& l = next_line();
            if (l == "BINARY") break;
            std::istringstream ls(l);
            std::string tag;
            ls >> tag;
            if (tag == "lipschitz") {
                std::size_t dict_idx;
                std::int64_t h, w;
                std::uint64_t bits;
                ls >> dict_idx >> h >> w >> bits;
                double value;
                std::memcpy(&value, &bits, sizeof(value));
                if (dict_idx >= model->dictionaries().size()) {
                    throw IoError(path + ": lipschitz entry for unknown dictionary");
                }
                model->dictionaries()[dict_idx]->set_cached_lipschitz(
                    h, w, static_cast<real_t>(value));
            } else if (tag == "adam_t") {
                std::string role, name;
                std::int64_t t;
                ls >> role >> name >> t;
                (role == "a" ? adam_t_a : adam_t_d)[name] = t;
            } else if (tag == "tensor") {
                TensorEntry e;
                std::size_t rank;
                ls >> e.name >> rank;
                for (std::size_t i = 0; i < rank; ++i) {
                    std::int64_t d;
                    ls >> d;
                    e.shape.push_back(d);
                }
                entries.push_back(std::move(e));
            } else {
                throw IoError(path + ": unknown manifest tag '" + tag + "'");
            }
        }

        std::map<std::string, autodiff::ParamPtr> by_name;
        for (const auto& p : model->parameters()) by_name[p->name] = p;
        auto bn_slot = [&](const std::string& name) -> Tensor* {
            // names: ebn.<i>.mean / dbn.<i>.var
            const bool enc = name[0] == 'e';
            auto& side = enc ? model->encoder_bn() : model->decoder_bn();
            const std::size_t dot = name.find('.', 4);
            const std::size_t idx = static_cast<std::size_t>(std::stoll(name.substr(4, dot - 4)));
            if (idx >= side.size() || !side[idx]) return nullptr;
            const std::string field = name.substr(dot + 1);
            return field == "mean" ? &side[idx]->stats.mean : &side[idx]->stats.var;
        };

        for (const auto& e : entries) {
            Tensor t(e.shape);
            if (!in.read(reinterpret_cast<char*>(t.data()),
                         static_cast<std::streamsize>(sizeof(real_t)) * t.size())) {
                throw IoError(path + ": truncated payload at " + e.name);
            }
            if (e.name.rfind("p.", 0) == 0) {
                auto it = by_name.find(e.name.substr(2));
                if (it == by_name.end()) throw IoError(path + ": unknown parameter " + e.name);
                if (!it->second->value.same_shape(t)) {
                    throw IoError(path + ": parameter shape mismatch for " + e.name);
                }
                it->second->value = std::move(t);
            } else if (e.name.rfind("ebn.", 0) == 0 || e.name.rfind("dbn.", 0) == 0) {
                Tensor* slot = bn_slot(e.name);
                if (!slot) throw IoError(path + ": unknown batch-norm slot " + e.name);
                *slot = std::move(t);
            } else if (e.name.rfind("am.", 0) == 0) {
                const bool ascent = e.name[3] == 'a';
                const std::string rest = e.name.substr(5);  // <name>.m / <name>.v
                const std::size_t dot = rest.rfind('.');
                const std::string pname = rest.substr(0, dot);
                auto& ms = ascent ? tr.ascent_moments_ : tr.descent_moments_;
                AdamState& st = ms[pname];
                st.t = (ascent ? adam_t_a : adam_t_d)[pname];
                (rest.substr(dot + 1) == "m" ? st.m : st.v) = std::move(t);
            } else {
                throw IoError(path + ": unknown tensor entry " + e.name);
            }
        }
        return tr;
    }
};

void Trainer::save_checkpoint(const std::string& path) const { CheckpointCodec::save(*this, path); }

Trainer Trainer::load_checkpoint(const std::string& path) { return CheckpointCodec::load(path); }

} // namespace csc::train

#include "ventseg/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ventseg {

namespace {

constexpr char kMagic[4] = {'V', 'S', 'C', 'K'};

void write_reals(std::ofstream& os, const std::vector<Real>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(Real)));
}

void read_reals(std::ifstream& is, std::vector<Real>& v, std::size_t n) {
    v.resize(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(Real)));
    if (!is) throw std::runtime_error("truncated checkpoint payload");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json h;
    h["format"] = 1;
    h["real_bytes"] = sizeof(Real);
    h["spec"] = ck.spec;
    h["iteration"] = ck.iteration;
    h["validation_dice"] = ck.validation_dice;
    h["rng_state"] = ck.rng_state;
    auto& ps = h["params"] = nlohmann::json::array();
    for (const auto& p : ck.params.all())
        ps.push_back({{"name", p.name}, {"shape", p.shape}, {"trainable", p.trainable}});
    h["optimizer"] = nullptr;
    if (ck.optimizer) {
        const auto& c = ck.optimizer->config();
        h["optimizer"] = {{"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}, {"steps", ck.optimizer->steps()}};
    }
    const auto header = h.dump();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os.write(kMagic, 4);
        const std::uint64_t len = header.size();
        os.write(reinterpret_cast<const char*>(&len), sizeof len);
        os.write(header.data(), static_cast<std::streamsize>(len));
        for (const auto& p : ck.params.all()) write_reals(os, p.value);
        if (ck.optimizer) {
            for (const auto& m : ck.optimizer->first_moments()) write_reals(os, m);
            for (const auto& v : ck.optimizer->second_moments()) write_reals(os, v);
        }
        if (!os) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || !std::equal(magic, magic + 4, kMagic)) throw std::runtime_error(path.string() + " is not a checkpoint");
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string header(len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("truncated checkpoint header");
    const auto h = nlohmann::json::parse(header);
    if (h.at("real_bytes").get<std::size_t>() != sizeof(Real))
        throw std::runtime_error("checkpoint scalar width differs from this build");

    Checkpoint ck;
    ck.spec = h.at("spec").get<NetworkSpec>();
    ck.iteration = h.at("iteration");
    ck.validation_dice = h.at("validation_dice");
    ck.rng_state = h.at("rng_state");
    for (const auto& p : h.at("params")) {
        const auto idx = ck.params.add(p.at("name"), p.at("shape").get<std::vector<std::int64_t>>(), 0,
                                       p.at("trainable").get<bool>());
        auto& param = ck.params[idx];
        read_reals(is, param.value, param.value.size());
    }
    if (!h.at("optimizer").is_null()) {
        const auto& o = h["optimizer"];
        Adam adam(ck.params, {o.at("beta1"), o.at("beta2"), o.at("epsilon")});
        adam.set_steps(o.at("steps"));
        for (auto& m : adam.first_moments()) read_reals(is, m, m.size());
        for (auto& v : adam.second_moments()) read_reals(is, v, v.size());
        ck.optimizer = std::move(adam);
    }
    return ck;
}

Network restore_network(const Checkpoint& ck) {
    auto net = Network::build(ck.spec, 0);
    net.load_parameters(ck.params);
    return net;
}

Checkpoint make_checkpoint(const Network& net, std::int64_t iteration, double validation_dice) {
    Checkpoint ck;
    ck.spec = net.spec();
    ck.iteration = iteration;
    ck.validation_dice = validation_dice;
    ck.params = net.params();
    return ck;
}

}  // namespace ventseg

#include "espec/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <utility>
#include <vector>

#include <json.hpp>

#include "espec/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; big-endian hosts are unsupported");

namespace espec {

namespace {

using ordered_json = nlohmann::ordered_json;

struct TensorRef {
    std::string name;
    const Matrix* tensor;
};

std::vector<TensorRef> manifest(const Model& model) {
    std::vector<TensorRef> refs;
    refs.push_back({"embedding", &model.weights.embedding});
    refs.push_back({"final_norm_gain", &model.weights.final_norm_gain});
    for (std::size_t i = 0; i < model.weights.layers.size(); ++i) {
        const auto& lw = model.weights.layers[i];
        const std::string prefix = "layers." + std::to_string(i) + ".";
        refs.push_back({prefix + "wq", &lw.wq});
        refs.push_back({prefix + "wk", &lw.wk});
        refs.push_back({prefix + "wv", &lw.wv});
        refs.push_back({prefix + "wo", &lw.wo});
        refs.push_back({prefix + "w_gate", &lw.w_gate});
        refs.push_back({prefix + "w_up", &lw.w_up});
        refs.push_back({prefix + "w_down", &lw.w_down});
        refs.push_back({prefix + "attn_norm_gain", &lw.attn_norm_gain});
        refs.push_back({prefix + "mlp_norm_gain", &lw.mlp_norm_gain});
    }
    return refs;
}

ordered_json config_to_json(const ModelConfig& cfg) {
    ordered_json j;
    j["vocab_size"] = cfg.vocab_size;
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["d_head"] = cfg.d_head;
    j["d_mlp"] = cfg.d_mlp;
    j["max_positions"] = cfg.max_positions;
    j["norm_eps"] = cfg.norm_eps;
    j["seed"] = cfg.seed;
    return j;
}

ModelConfig config_from_json(const ordered_json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_head = j.at("d_head").get<int>();
    cfg.d_mlp = j.at("d_mlp").get<int>();
    cfg.max_positions = j.at("max_positions").get<int>();
    cfg.norm_eps = j.at("norm_eps").get<float>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    const auto refs = manifest(model);

    ordered_json header;
    header["config"] = config_to_json(model.config);
    header["tensors"] = ordered_json::array();
    for (const auto& ref : refs) {
        header["tensors"].push_back({{"name", ref.name},
                                     {"shape", {ref.tensor->rows, ref.tensor->cols}}});
    }
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out.write(kModelMagic, 7);
    const std::uint64_t header_len = header_text.size();
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& ref : refs) {
        out.write(reinterpret_cast<const char*>(ref.tensor->data.data()),
                  static_cast<std::streamsize>(ref.tensor->data.size() * sizeof(float)));
    }
    if (!out) {
        throw IoError("short write to '" + path + "'");
    }
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open model file '" + path + "'");
    }

    char magic[7] = {};
    in.read(magic, 7);
    if (!in || std::memcmp(magic, kModelMagic, 7) != 0) {
        throw IoError("'" + path + "' is not a model file (bad magic)");
    }
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (!in || header_len == 0 || header_len > (1ull << 24)) {
        throw IoError("corrupt model header length");
    }
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw IoError("truncated model header");
    }

    ordered_json header;
    try {
        header = ordered_json::parse(header_text);
    } catch (const std::exception& e) {
        throw IoError(std::string("invalid model header JSON: ") + e.what());
    }

    Model model;
    model.config = config_from_json(header.at("config"));
    model.config.validate();
    model.weights.layers.resize(static_cast<std::size_t>(model.config.n_layers));

    auto refs = manifest(model);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != refs.size()) {
        throw IoError("tensor manifest does not match the config layer count");
    }

    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& entry = tensors.at(i);
        if (entry.at("name").get<std::string>() != refs[i].name) {
            throw IoError("unexpected tensor '" + entry.at("name").get<std::string>() +
                          "', wanted '" + refs[i].name + "'");
        }
        const int rows = entry.at("shape").at(0).get<int>();
        const int cols = entry.at("shape").at(1).get<int>();
        if (rows <= 0 || cols <= 0) {
            throw IoError("degenerate shape for tensor '" + refs[i].name + "'");
        }
        Matrix tensor(rows, cols);
        in.read(reinterpret_cast<char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
        if (!in) {
            throw IoError("truncated tensor data for '" + refs[i].name + "'");
        }
        if (!all_finite(tensor.data)) {
            throw IoError("tensor '" + refs[i].name + "' contains non-finite values");
        }
        *const_cast<Matrix*>(refs[i].tensor) = std::move(tensor);
    }

    const auto& cfg = model.config;
    const auto& w = model.weights;
    auto expect = [&](const Matrix& m, int rows, int cols, const char* what) {
        if (m.rows != rows || m.cols != cols) {
            throw IoError(std::string("tensor '") + what + "' shape disagrees with config");
        }
    };
    expect(w.embedding, cfg.vocab_size, cfg.d_model, "embedding");
    expect(w.final_norm_gain, 1, cfg.d_model, "final_norm_gain");
    for (const auto& lw : w.layers) {
        expect(lw.wq, cfg.d_model, cfg.d_model, "wq");
        expect(lw.wk, cfg.d_model, cfg.d_model, "wk");
        expect(lw.wv, cfg.d_model, cfg.d_model, "wv");
        expect(lw.wo, cfg.d_model, cfg.d_model, "wo");
        expect(lw.w_gate, cfg.d_model, cfg.d_mlp, "w_gate");
        expect(lw.w_up, cfg.d_model, cfg.d_mlp, "w_up");
        expect(lw.w_down, cfg.d_mlp, cfg.d_model, "w_down");
        expect(lw.attn_norm_gain, 1, cfg.d_model, "attn_norm_gain");
        expect(lw.mlp_norm_gain, 1, cfg.d_model, "mlp_norm_gain");
    }
    return model;
}

}  // namespace espec

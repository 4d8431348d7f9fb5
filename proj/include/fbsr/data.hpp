#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fbsr/forward_model.hpp"
#include "fbsr/geometry.hpp"
#include "fbsr/image.hpp"

namespace fbsr {

enum class FrameRole { InputLR, EstimatedHR, Natural, Derived };
enum class Domain { InputLR, Nat, Orig, Syn, Res };
enum class SplitTag { Train, Validation, Test };
enum class SplitMode { CS1, CS2 };

std::string to_string(FrameRole role);
std::string to_string(Domain domain);
std::string to_string(SplitTag tag);
std::string to_string(SplitMode mode);
FrameRole parse_frame_role(const std::string& s);
/// Accepts "lr", "nat", "orig", "syn", "res".
Domain parse_domain(const std::string& s);
SplitMode parse_split_mode(const std::string& s);

struct Frame {
    std::string id;  // unique; shared by an LR frame and the HR frame it was made from
    std::string video_id;
    std::string patient_id;
    std::string setting;  // empty collapses into one stratum
    FrameRole role = FrameRole::InputLR;
    Image image;
    FovMask fov;  // empty mask = full frame
    std::filesystem::path path;
};

struct Patch {
    Image image;
    std::string frame_id;
    int x = 0;
    int y = 0;
    std::string video_id;
    std::string patient_id;
    std::string setting;
    /// Fibre layout restricted to the patch (input-LR patches only).
    std::shared_ptr<const FibreLayout> layout;
    /// Pixel-aligned synthetic LR partner (T_syn patches only).
    std::optional<Image> paired_lr;

    /// Identifies the scene region: an LR patch and an HR patch with equal keys are a pair.
    [[nodiscard]] std::string pair_key() const;
};

struct Dataset {
    Domain domain = Domain::InputLR;
    SplitTag split = SplitTag::Train;
    int patch_size = 64;
    std::vector<Patch> patches;

    [[nodiscard]] std::size_t size() const { return patches.size(); }
};

/// Z-score over the in-FOV pixels, then affine rescale of those pixels to
/// [0,1]; pixels outside the FOV are set to 0. A constant frame becomes 0.5.
Image normalize_frame(const Image& raw, const FovMask& fov = {});

struct PatchOrigin {
    int x = 0;
    int y = 0;
};

/// Non-overlapping grid tiling from the top-left corner; a tile is kept when at
/// least `min_coverage` of its pixels lie inside the FOV.
std::vector<PatchOrigin> patch_grid(int width, int height, int patch_size, const FovMask& fov,
                                    double min_coverage = 0.99);

std::vector<Patch> extract_patches(const Frame& frame, int patch_size, double min_coverage = 0.99);

struct SplitFractions {
    double train = 0.70;
    double validation = 0.15;
    double test = 0.15;
};

struct SplitResult {
    std::vector<SplitTag> assignment;  // one per frame
    std::vector<std::string> warnings;
};

/// Assigns whole groups (video for CS1, patient for CS2) to splits. Each group
/// belongs to the stratum of its most frequent setting; within a stratum the
/// shuffled groups are divided by largest-remainder rounding of the fractions.
SplitResult split_frames(const std::vector<Frame>& frames, SplitMode mode, const SplitFractions& fractions,
                         std::uint64_t seed);

/// Group key of a frame under the given mode.
const std::string& group_key(const Frame& frame, SplitMode mode);

/// 4x4 block means; dimensions must be multiples of the factor.
Image box_downsample(const Image& image, int factor);

struct DomainSources {
    std::vector<const Frame*> frames;  // natural images, HR estimates or LR frames, by kind
    const FibreLayout* layout = nullptr;  // frame layout, for syn
    const NoiseModel* noise = nullptr;    // for syn
};

/// Target-domain patch pool. nat: natural images normalised and tiled; orig:
/// HR estimates tiled; syn: HR estimates tiled, each with its synthesised LR
/// partner; res: LR regions of 4*patch_size side reduced by 4x4 block means.
Dataset build_target_domain(Domain kind, const DomainSources& sources, int patch_size, double min_coverage = 0.99);

/// Input-LR pool: LR frames tiled, each patch carrying its cropped layout.
Dataset build_input_domain(const std::vector<const Frame*>& frames, const FibreLayout& layout, int patch_size,
                           double min_coverage = 0.99);

// ---- procedural content ----

/// Cells, filaments and a smooth background gradient, normalised to [0,1].
Image make_phantom(int width, int height, std::uint64_t seed);

/// Grayscale texture with a 1/f spectrum and a few occluding shapes, in [0,1].
Image make_natural_standin(int width, int height, std::uint64_t seed);

struct CorpusConfig {
    int frames = 24;
    int frame_size = 128;
    int videos = 12;
    int patients = 6;
    int settings = 2;
    double density = 1.0 / 7.0;
    double jitter = 0.2;
    double sigma_add = 0.02;
    double sigma_mult = 0.05;
    bool circular_fov = false;
    std::uint64_t seed = 0;
};

struct Corpus {
    FibreLayout layout;
    std::vector<Frame> hr;
    std::vector<Frame> lr;  // lr[i] is synthesised from hr[i]
};

/// Phantom HR frames and their synthetic LR counterparts. Frame i belongs to
/// video i % videos, the video to patient video % patients, and the patient to
/// setting patient % settings.
Corpus make_synthetic_corpus(const CorpusConfig& config);

// ---- files ----

/// One JSON object per line: {path, video_id, patient_id, setting, role, id}.
void write_manifest(const std::filesystem::path& path, const std::vector<Frame>& frames);
/// Reads the manifest and loads every referenced PNG (relative paths resolve
/// against the manifest's directory).
std::vector<Frame> read_manifest(const std::filesystem::path& path, bool load_images = true);

/// Packed patches: magic, JSON index header, then little-endian float32 pixels.
void write_packed_patches(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_packed_patches(const std::filesystem::path& path);

}  // namespace fbsr

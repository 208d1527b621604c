// Serial CPU emulation of the CUDA execution model.
//
// Compile an unmodified kernel body as a plain host function and run it once
// per (blockIdx, threadIdx) pair: blocks outer, threads inner, x fastest.
// Thread-index pseudo-variables are mutable globals set by the launch loops;
// execution is strictly single threaded, so there is no data race by
// construction. Device-memory calls alias host memory (alloc = malloc,
// copy = memmove), which is sufficient for functional equivalence.
//
// Out of scope, rejected upstream by the compatibility screen: barriers,
// shared memory, warp intrinsics, dynamic parallelism. Atomic operations
// are provided with plain serial semantics.
//
// Kernel launches must be rewritten from name<<<G, B>>>(args) into
// CUDA_LAUNCH(name, G, B, args) before compilation.

#ifndef COVERIFY_CUDA_SHIM_H
#define COVERIFY_CUDA_SHIM_H

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <cstring>
#include <type_traits>

#define __global__
#define __device__
#define __host__
#define __constant__
#define __forceinline__ inline
#ifndef __restrict__
#define __restrict__
#endif

struct dim3 {
    unsigned int x, y, z;
    dim3(unsigned int x_ = 1, unsigned int y_ = 1, unsigned int z_ = 1)
        : x(x_), y(y_), z(z_) {}
};

inline dim3 threadIdx(0, 0, 0);
inline dim3 blockIdx(0, 0, 0);
inline dim3 blockDim(1, 1, 1);
inline dim3 gridDim(1, 1, 1);

// -- device memory shims ------------------------------------------------------

typedef int cudaError_t;
enum { cudaSuccess = 0 };
enum cudaMemcpyKind {
    cudaMemcpyHostToHost = 0,
    cudaMemcpyHostToDevice = 1,
    cudaMemcpyDeviceToHost = 2,
    cudaMemcpyDeviceToDevice = 3,
    cudaMemcpyDefault = 4,
};

inline cudaError_t cudaMalloc(void** ptr, std::size_t size) {
    *ptr = std::malloc(size);
    return cudaSuccess;
}

template <class T>
inline cudaError_t cudaMalloc(T** ptr, std::size_t size) {
    *ptr = static_cast<T*>(std::malloc(size));
    return cudaSuccess;
}

inline cudaError_t cudaMemcpy(void* dst, const void* src, std::size_t count,
                              cudaMemcpyKind) {
    std::memmove(dst, src, count);
    return cudaSuccess;
}

inline cudaError_t cudaMemset(void* ptr, int value, std::size_t count) {
    std::memset(ptr, value, count);
    return cudaSuccess;
}

inline cudaError_t cudaFree(void* ptr) {
    std::free(ptr);
    return cudaSuccess;
}

inline cudaError_t cudaDeviceSynchronize() { return cudaSuccess; }
inline cudaError_t cudaThreadSynchronize() { return cudaSuccess; }
inline cudaError_t cudaGetLastError() { return cudaSuccess; }
inline const char* cudaGetErrorString(cudaError_t) { return "no error"; }

// -- serial launch ------------------------------------------------------------

namespace coverify_shim {

inline dim3 to_dim3(const dim3& d) { return d; }

template <class T, typename std::enable_if<std::is_integral<T>::value, int>::type = 0>
inline dim3 to_dim3(T n) {
    return dim3(static_cast<unsigned int>(n), 1, 1);
}

template <class Body>
inline void launch(dim3 grid, dim3 block, Body&& body) {
    gridDim = grid;
    blockDim = block;
    for (unsigned int bz = 0; bz < grid.z; ++bz)
        for (unsigned int by = 0; by < grid.y; ++by)
            for (unsigned int bx = 0; bx < grid.x; ++bx) {
                blockIdx = dim3(bx, by, bz);
                for (unsigned int tz = 0; tz < block.z; ++tz)
                    for (unsigned int ty = 0; ty < block.y; ++ty)
                        for (unsigned int tx = 0; tx < block.x; ++tx) {
                            threadIdx = dim3(tx, ty, tz);
                            body();
                        }
            }
    threadIdx = dim3(0, 0, 0);
    blockIdx = dim3(0, 0, 0);
}

}  // namespace coverify_shim

#define CUDA_LAUNCH(kernel, grid, block, ...)                               \
    ::coverify_shim::launch(::coverify_shim::to_dim3(grid),                 \
                            ::coverify_shim::to_dim3(block),                \
                            [&] { kernel(__VA_ARGS__); })

// -- serial atomics -----------------------------------------------------------

template <class T>
inline T atomicAdd(T* address, T value) {
    T old = *address;
    *address = old + value;
    return old;
}

template <class T>
inline T atomicSub(T* address, T value) {
    T old = *address;
    *address = old - value;
    return old;
}

template <class T>
inline T atomicExch(T* address, T value) {
    T old = *address;
    *address = value;
    return old;
}

template <class T>
inline T atomicMax(T* address, T value) {
    T old = *address;
    if (value > old) *address = value;
    return old;
}

template <class T>
inline T atomicMin(T* address, T value) {
    T old = *address;
    if (value < old) *address = value;
    return old;
}

// -- device math conveniences -------------------------------------------------

inline int min(int a, int b) { return a < b ? a : b; }
inline int max(int a, int b) { return a > b ? a : b; }
inline unsigned int min(unsigned int a, unsigned int b) { return a < b ? a : b; }
inline unsigned int max(unsigned int a, unsigned int b) { return a > b ? a : b; }
inline long long min(long long a, long long b) { return a < b ? a : b; }
inline long long max(long long a, long long b) { return a > b ? a : b; }
inline float min(float a, float b) { return a < b ? a : b; }
inline float max(float a, float b) { return a > b ? a : b; }
inline double min(double a, double b) { return a < b ? a : b; }
inline double max(double a, double b) { return a > b ? a : b; }

inline float rsqrtf(float x) { return 1.0f / std::sqrt(x); }
inline double rsqrt(double x) { return 1.0 / std::sqrt(x); }
inline float __expf(float x) { return std::exp(x); }
inline float __logf(float x) { return std::log(x); }
inline float __powf(float x, float y) { return std::pow(x, y); }
inline float __fdividef(float a, float b) { return a / b; }
inline float __sinf(float x) { return std::sin(x); }
inline float __cosf(float x) { return std::cos(x); }

#endif  // COVERIFY_CUDA_SHIM_H
